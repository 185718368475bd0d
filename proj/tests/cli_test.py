"""End-to-end checks of the mvd command line tool.

usage: cli_test.py PATH_TO_MVD
"""

import json
import os
import re
import subprocess
import sys
import tempfile
import unittest

MVD = None
ERROR_LINE = re.compile(r"^error: code=[A-Za-z]+ message=.+$")

TINY = [
    "--set", "rig.image_size=16",
    "--set", "schedule.steps=4",
    "--set", "schedule.reference_steps=4",
    "--set", "net.channels=8",
    "--set", "net.emb_dim=8",
    "--set", "net.time_dim=8",
    "--set", "net.attn_heads=2",
    "--set", "agg.dim=8",
    "--set", "agg.heads=2",
    "--set", "agg.layers=1",
    "--set", "agg.out_channels=4",
    "--set", "agg.time_dim=4",
    "--set", "agg.tap_channels=2",
]


def run(*args, env=None, cwd=None):
    return subprocess.run([MVD, *args], capture_output=True, text=True, env=env, cwd=cwd)


class Cli(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = cls.tmp.name
        r = run("gen-data", "--scenes", "2", "--out", os.path.join(cls.dir, "data"), "--seed", "3",
                "--set", "rig.image_size=16")
        assert r.returncode == 0, r.stderr
        r = run("train", "--data", os.path.join(cls.dir, "data"), "--steps", "3",
                "--out", os.path.join(cls.dir, "train"), *TINY)
        assert r.returncode == 0, r.stderr

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.dir, *parts)

    def assert_error(self, r, code):
        self.assertNotEqual(r.returncode, 0)
        lines = r.stderr.strip().splitlines()
        self.assertEqual(len(lines), 1, r.stderr)
        self.assertRegex(lines[0], ERROR_LINE)
        self.assertIn("code=" + code, lines[0])

    def test_help_lists_every_key(self):
        r = run("--help")
        self.assertEqual(r.returncode, 0)
        for sub in ["gen-data", "train", "sample", "eval", "bench-frustum", "export-ply"]:
            self.assertIn(sub, r.stdout)
        keys = re.findall(r"^  ([a-z_]+(?:\.[a-z_]+)?)\s", r.stdout.split("Config keys")[1], re.M)
        for key in ["seed", "schedule.steps", "depth.sigma_form", "sample.omega", "rig.far",
                    "net.use_frustum", "agg.stride", "train.cfg_dropout", "train.ema_decay"]:
            self.assertIn(key, keys)
        self.assertIn("MVD_OUTPUT_DIR", r.stdout)

    def test_dataset_layout(self):
        self.assertTrue(os.path.isdir(self.path("data")))
        self.assertTrue(os.listdir(self.path("data")))

    def test_train_outputs(self):
        with open(self.path("train", "loss.csv")) as f:
            rows = f.read().splitlines()
        self.assertEqual(rows[0], "step,loss")
        self.assertEqual(len(rows), 4)
        self.assertTrue(os.path.getsize(self.path("train", "checkpoint.bin")) > 0)

    def test_sample_eval_and_ply(self):
        out = self.path("sample")
        r = run("sample", "--checkpoint", self.path("train", "checkpoint.bin"),
                "--data", self.path("data"), "--scene", "1", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        r = run("eval", "--generated", out, "--reference", self.path("data"), "--scene", "1",
                "--out", self.path("report"))
        self.assertEqual(r.returncode, 0, r.stderr)
        with open(self.path("report", "report.json")) as f:
            report = json.load(f)
        self.assertEqual(len(report["view_psnr"]), 16)
        self.assertIn("mean_ssim", report)
        with open(self.path("report", "report.csv")) as f:
            self.assertEqual(f.readline().strip(), "metric,view,value")

        from plyfile import PlyData
        ply = PlyData.read(os.path.join(out, "cloud.ply"))
        names = [p.name for p in ply["vertex"].properties]
        self.assertEqual(names, ["x", "y", "z", "red", "green", "blue"])

    def test_export_ply(self):
        r = run("export-ply", "--data", self.path("data"), "--out", self.path("gt.ply"))
        self.assertEqual(r.returncode, 0, r.stderr)
        from plyfile import PlyData
        vertex = PlyData.read(self.path("gt.ply"))["vertex"]
        self.assertGreater(vertex.count, 0)
        self.assertIn("%d points" % vertex.count, r.stdout)

    def test_output_dir_env(self):
        env = dict(os.environ, MVD_OUTPUT_DIR=self.path("envout"))
        r = run("export-ply", "--data", self.path("data"), env=env)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertTrue(os.path.isfile(self.path("envout", "cloud.ply")))

    def test_bench_frustum(self):
        csv = self.path("bench.csv")
        r = run("bench-frustum", "--views", "2", "--dense", "4", "--repeats", "1", "--out", csv,
                "--set", "rig.image_size=16")
        self.assertEqual(r.returncode, 0, r.stderr)
        with open(csv) as f:
            rows = f.read().splitlines()
        self.assertEqual(rows[0], "mode,depth_samples,views,grid,seconds,bytes")
        self.assertTrue(rows[1].startswith("sparse,3,2,8x8,"))
        self.assertEqual([r.split(",")[1] for r in rows[2:]], ["1", "2", "4"])

    def test_errors(self):
        self.assert_error(run("train"), "Usage")
        self.assert_error(run("nonsense"), "Usage")
        self.assert_error(run("train", "--data", self.path("missing")), "IoError")
        self.assert_error(run("gen-data", "--out", self.path("x"), "--set", "rig.far=0.5"),
                          "InvalidConfig")
        self.assert_error(run("gen-data", "--out", self.path("x"), "--set", "no.such=1"),
                          "InvalidConfig")
        self.assert_error(run("train", "--data", self.path("data"), "--out", self.path("t2")),
                          "InvalidConfig")
        cfg = self.path("some.cfg")
        with open(cfg, "w") as f:
            f.write("seed = 1\n")
        self.assert_error(run("sample", "--checkpoint", self.path("train", "checkpoint.bin"),
                              "--data", self.path("data"), "--config", cfg), "InvalidConfig")
        self.assert_error(run("sample", "--checkpoint", self.path("data"), "--data",
                              self.path("data")), "CorruptCheckpoint")
        self.assert_error(run("sample", "--checkpoint", self.path("none.bin"), "--data",
                              self.path("data")), "IoError")


if __name__ == "__main__":
    MVD = sys.argv.pop(1)
    unittest.main()
