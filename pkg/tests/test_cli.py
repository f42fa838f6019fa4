# tests/test_cli.py
import io
import shutil
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from typing import List, Tuple
from unittest import mock

import pandas as pd

from src.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from src.tensor import NumericError

SMALL_CONFIG = ("# kleiner Testlauf\n"
                "anchors = 3\n"
                "latent_dim = 2\n"
                "hidden_dims = 8\n"
                "epochs = 1\n"
                "batch_size = 8\n"
                "log_every = 1\n"
                "lr = 0.01\n")


class TestCommandLine(unittest.TestCase):
    """Drives ``main`` end to end on a generated synthetic dataset."""

    def setUp(self):
        print("\n" + "=" * 60)
        print(self._testMethodName)
        print("=" * 60)
        self.tmp = Path(tempfile.mkdtemp())
        self.data = self.tmp / "data"
        self.config = self.tmp / "small.cfg"
        self.config.write_text(SMALL_CONFIG, encoding="utf-8")
        code, _, _ = self._run(["gen-synth", "--clusters", "3", "--per-cluster", "8", "--test-per-cluster", "4",
                                "--dim", "4", "--spread", "0.3", "--seed", "0", "--out", str(self.data)])
        self.assertEqual(code, EXIT_OK)

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def _run(self, argv: List[str]) -> Tuple[int, str, str]:
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(argv)
        return code, out.getvalue(), err.getvalue()

    def _train(self, out: Path, *extra: str) -> int:
        return self._run(["train", "--config", str(self.config), "--data-dir", str(self.data),
                          "--out", str(out), *extra])[0]

    def test_01_gen_synth_writes_both_splits(self):
        self.assertTrue((self.data / "train.nvcd").exists())
        self.assertTrue((self.data / "test.nvcd").exists())

    def test_02_train_eval_export(self):
        run = self.tmp / "run"
        self.assertEqual(self._train(run, "--mode", "nvc"), EXIT_OK)
        self.assertTrue((run / "final.ckpt").exists())

        argv = ["eval", "--checkpoint", str(run / "final.ckpt"), "--data-dir", str(self.data),
                "--csv", str(self.tmp / "eval.csv")]
        code, first, _ = self._run(argv)
        self.assertEqual(code, EXIT_OK)
        keys = [line.split("=")[0] for line in first.splitlines() if "=" in line]
        for key in ("rel", "delta1", "delta2", "delta3", "anchor_accuracy", "covariance_offdiag_mean_abs"):
            self.assertIn(key, keys, f"'{key}' sollte ausgegeben werden")
        self.assertEqual(self._run(argv)[1], first, "Zweimalige Auswertung sollte identisch sein")
        self.assertEqual(len(pd.read_csv(self.tmp / "eval.csv")), 1)

        latents = self.tmp / "latents.csv"
        code, _, _ = self._run(["export-latents", "--checkpoint", str(run / "final.ckpt"),
                                "--data-dir", str(self.data), "--out", str(latents)])
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(latents)
        self.assertEqual(list(frame.columns),
                         ["sample_index", "true_label", "assigned_anchor", "anchor_index", "z_0", "z_1"])
        self.assertEqual(len(frame), 12 + 3, "Test-Samples plus eine Zeile pro Anker erwartet")
        anchors = frame[frame.anchor_index >= 0]
        self.assertTrue((anchors.sample_index == -1).all())
        self.assertTrue((anchors.assigned_anchor == anchors.anchor_index).all())

    def test_03_same_flags_give_identical_metrics(self):
        self.assertEqual(self._train(self.tmp / "a", "--seed", "3"), EXIT_OK)
        self.assertEqual(self._train(self.tmp / "b", "--seed", "3"), EXIT_OK)
        self.assertEqual((self.tmp / "a" / "metrics.csv").read_bytes(), (self.tmp / "b" / "metrics.csv").read_bytes())

    def test_04_vae_eval_omits_anchor_accuracy(self):
        run = self.tmp / "vae"
        code, out, _ = self._run(["train", "--config", str(self.config), "--data-dir", str(self.data),
                                  "--out", str(run), "--mode", "vae", "--anchors", "10"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("Warnung", out, "anchors im vae-Modus sollten eine Warnung auslösen")
        code, out, _ = self._run(["eval", "--checkpoint", str(run / "final.ckpt"), "--data-dir", str(self.data)])
        self.assertEqual(code, EXIT_OK)
        self.assertNotIn("anchor_accuracy", out)

    def test_05_truncated_checkpoint(self):
        run = self.tmp / "run"
        self._train(run)
        broken = self.tmp / "broken.ckpt"
        broken.write_bytes((run / "final.ckpt").read_bytes()[:-10])
        code, _, err = self._run(["eval", "--checkpoint", str(broken), "--data-dir", str(self.data)])
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("unexpected end of section", err)

    def test_06_exit_codes(self):
        bad_config = self.tmp / "bad.cfg"
        bad_config.write_text("mode = gan\n", encoding="utf-8")
        code, _, err = self._run(["train", "--config", str(bad_config), "--data-dir", str(self.data),
                                  "--out", str(self.tmp / "x")])
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("'mode'", err)

        self.assertEqual(self._train(self.tmp / "y", "--epochs", "0"), EXIT_CONFIG)
        code, _, _ = self._run(["train", "--data-dir", str(self.tmp / "missing"), "--out", str(self.tmp / "z")])
        self.assertEqual(code, EXIT_DATA, "Fehlende Daten sollten Exit-Code 2 liefern")

        with mock.patch("src.pipeline.kl_diag_gaussian", side_effect=NumericError("non-finite kl")):
            code, _, err = self._run(["train", "--config", str(self.config), "--data-dir", str(self.data),
                                      "--out", str(self.tmp / "nan")])
        self.assertEqual(code, EXIT_NUMERIC)
        self.assertIn("'kl'", err)

    def test_07_usage_errors_exit_with_config_code(self):
        with self.assertRaises(SystemExit) as ctx, redirect_stderr(io.StringIO()):
            main(["train", "--no-such-flag"])
        self.assertEqual(ctx.exception.code, EXIT_CONFIG)

    def test_08_sweep_and_ablation(self):
        code, _, _ = self._run(["sweep", "--config", str(self.config), "--data-dir", str(self.data),
                                "--out", str(self.tmp / "sweep"), "--anchors", "1,2,2", "--modes", "nvc"])
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(self.tmp / "sweep" / "sweep.csv")
        self.assertEqual(list(frame.columns), ["mode", "anchors", "rel", "delta1", "delta2", "delta3", "accuracy"])
        self.assertEqual(frame.anchors.tolist(), [1, 2])

        code, _, _ = self._run(["ablation", "--config", str(self.config), "--data-dir", str(self.data),
                                "--out", str(self.tmp / "ablation"), "--variants", "vae,nvc"])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(pd.read_csv(self.tmp / "ablation" / "ablation.csv")), 2)

    def test_09_baseline(self):
        code, _, _ = self._run(["baseline", "--config", str(self.config), "--data-dir", str(self.data),
                                "--out", str(self.tmp / "baseline"), "--update", "robbins_monro"])
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((self.tmp / "baseline" / "baseline_metrics.csv").exists())


if __name__ == "__main__":
    unittest.main()
