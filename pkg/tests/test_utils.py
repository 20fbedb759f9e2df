import json
import unittest

import numpy as np

from pbcfw.config import Config
from pbcfw.utils import RandomStreams, config_comment, sample_subset, setup_logging, to_jsonable, weighted_gap_average


class TestUtils(unittest.TestCase):
    def setUp(self):
        setup_logging()

    def test_random_streams(self):
        streams = RandomStreams(7, 3)
        self.assertIs(streams.worker_blocks[0], streams.blocks)
        self.assertEqual(len(streams.coins), 3)
        self.assertEqual(len(streams.noise), 3)
        self.assertEqual(len(streams.costs), 3)
        self.assertIsNot(streams.costs[0], streams.noise[0])
        again = RandomStreams(7, 3)
        self.assertEqual(streams.delays.integers(1000, size=5).tolist(), again.delays.integers(1000, size=5).tolist())
        # adding workers leaves the server block stream unchanged
        wider = RandomStreams(7, 5)
        self.assertEqual(RandomStreams(7, 3).blocks.integers(1000, size=5).tolist(), wider.blocks.integers(1000, size=5).tolist())

    def test_sample_subset(self):
        rng = np.random.default_rng(0)
        S, draws = sample_subset(rng, 5, 5)
        self.assertEqual(sorted(S), [0, 1, 2, 3, 4])
        self.assertGreaterEqual(draws, 5)

    def test_weighted_gap_average(self):
        self.assertEqual(weighted_gap_average([4.0]), 4.0)
        self.assertAlmostEqual(weighted_gap_average([3.0, 0.0]), 1.0)
        self.assertTrue(np.isnan(weighted_gap_average([])))

    def test_jsonable(self):
        value = to_jsonable({"a": np.int64(2), "b": np.array([1.5, np.nan]), 3: (np.float32(0.5),)})
        self.assertEqual(value, {"a": 2, "b": [1.5, None], "3": [0.5]})
        comment = config_comment({"tau": np.int64(4), "seed": 0})
        self.assertEqual(json.loads(comment[len("config ") :]), {"seed": 0, "tau": 4})

    def test_config_setters(self):
        default = Config.get("ARCHIVE_MIN")
        Config.set("ARCHIVE_MIN", 128)
        self.assertEqual(Config.get("ARCHIVE_MIN"), 128)
        Config.set("ARCHIVE_MIN", default)
        with self.assertRaises(NameError):
            Config.set("SYMMETRY_TOL", 1.0)


if __name__ == "__main__":
    unittest.main()
