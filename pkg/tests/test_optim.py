# tests/test_optim.py
import unittest

import numpy as np

from src.optim import SGD, Adam, AdamState, OptimizerError, adam_step, build_optimizer, sgd_step
from src.tensor import Tensor


def _param(value: float, grad: float) -> Tensor:
    p = Tensor([value], requires_grad=True)
    p.grad = np.array([grad], dtype=np.float32)
    return p


class TestOptimizers(unittest.TestCase):

    def setUp(self):
        print("\n" + "=" * 60)
        print(self._testMethodName)
        print("=" * 60)

    def test_01_sgd_step(self):
        w = _param(1.0, 2.0)
        sgd_step([w], lr=0.1)
        self.assertAlmostEqual(float(w.data[0]), 0.8, places=6, msg="w - lr·g sollte 0.8 ergeben")
        self.assertEqual(float(w.grad[0]), 0.0, "Gradient sollte nach dem Schritt genullt sein")

    def test_02_sgd_zero_grad_keeps_weight(self):
        w = _param(1.0, 0.0)
        sgd_step([w], lr=0.1)
        self.assertEqual(float(w.data[0]), 1.0)

    def test_03_adam_first_step(self):
        w = _param(1.0, 1.0)
        state = AdamState()
        adam_step({"w": w}, lr=0.001, state=state)
        self.assertAlmostEqual(float(w.data[0]), 0.999, places=6, msg="Erster Adam-Schritt sollte ≈ lr bewegen")
        self.assertEqual(state.step, 1)

    def test_04_missing_grad_changes_nothing(self):
        ready = _param(1.0, 1.0)
        missing = Tensor([5.0], requires_grad=True)
        with self.assertRaises(OptimizerError) as ctx:
            sgd_step({"ready": ready, "missing": missing}, lr=0.1)
        self.assertIn("missing", str(ctx.exception))
        self.assertEqual(float(ready.data[0]), 1.0, "Kein Parameter sollte vor der Prüfung verändert werden")

    def test_05_adam_state_dict_round_trip(self):
        w = _param(1.0, 0.5)
        first = Adam({"w": w}, lr=0.01)
        first.step()
        state = first.state_dict()
        self.assertEqual(set(state), {"step", "m.w", "v.w"})

        w2 = Tensor(w.data, requires_grad=True)
        second = Adam({"w": w2}, lr=0.01)
        second.load_state_dict(state)
        w.grad = np.array([0.25], dtype=np.float32)
        w2.grad = np.array([0.25], dtype=np.float32)
        first.step()
        second.step()
        np.testing.assert_array_equal(w.data, w2.data, "Fortgesetzter Adam-Zustand sollte identisch rechnen")

    def test_06_build_optimizer(self):
        w = _param(0.0, 0.0)
        self.assertIsInstance(build_optimizer("sgd", [w], 0.1), SGD)
        self.assertIsInstance(build_optimizer("adam", [w], 0.1), Adam)
        with self.assertRaises(OptimizerError):
            build_optimizer("rmsprop", [w], 0.1)
        with self.assertRaises(OptimizerError):
            build_optimizer("sgd", [w], 0.0)

    def test_07_reset_rows_clears_adam_history(self):
        w = Tensor(np.ones((3, 2), dtype=np.float32), requires_grad=True)
        w.grad = np.full((3, 2), 0.5, dtype=np.float32)
        adam = Adam({"anchors": w}, lr=0.01)
        adam.step()
        adam.reset_rows("anchors", [1])
        np.testing.assert_array_equal(adam.state.m["anchors"][1], [0.0, 0.0])
        np.testing.assert_array_equal(adam.state.v["anchors"][1], [0.0, 0.0])
        self.assertTrue(np.all(adam.state.m["anchors"][[0, 2]] > 0), "Andere Zeilen sollten erhalten bleiben")
        adam.reset_rows("unknown", [0])
        SGD({"anchors": w}, lr=0.01).reset_rows("anchors", [0])


if __name__ == "__main__":
    unittest.main()
