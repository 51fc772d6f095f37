"""Tour of the reverse-mode tensor core.

Builds a small computation by hand, walks the backward pass, checks the
result against finite differences, and shows the no-grad escape hatch.
"""

import numpy as np

from fasbench.tensor import (
    Tensor,
    backward,
    exp,
    finite_diff_check,
    matmul,
    mul,
    no_grad,
    softmax,
    tmean,
    tsum,
)


def main():
    print("== a tensor is a numpy array plus an optional gradient slot ==")
    w = Tensor(np.array([[0.5, -1.0], [2.0, 0.1]]), requires_grad=True)
    x = Tensor(np.array([[1.0], [3.0]]))  # constant: no gradient requested
    print(f"w = {w.data.tolist()}, w.grad = {w.grad}")

    print("\n== forward builds a graph; backward(scalar) fills .grad ==")
    y = tsum(mul(matmul(w, x), matmul(w, x)))  # sum((w @ x)^2)
    backward(y)
    print(f"loss = {float(y.data):.4f}")
    print(f"dy/dw =\n{w.grad}")
    # Analytic check: d/dw sum((w x)^2) = 2 (w x) x^T
    analytic = 2.0 * (w.data @ x.data) @ x.data.T
    print(f"analytic 2(wx)x^T matches: {np.allclose(w.grad, analytic)}")

    print("\n== every op's rule is validated against central differences ==")
    v = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    report = finite_diff_check(lambda t: tmean(exp(softmax(t, axis=-1))), v)
    print(f"max relative error vs finite differences: {report.max_rel_err:.2e}")

    print("\n== gradients accumulate across backward calls until cleared ==")
    w.grad = None
    a = tsum(mul(w, w))
    b = tsum(mul(w, 3.0))
    backward(a)
    backward(b)
    print(f"grad of (sum w^2) + (sum 3w) = 2w + 3 elementwise: "
          f"{np.allclose(w.grad, 2 * w.data + 3)}")

    print("\n== no_grad() runs forward math without recording the graph ==")
    with no_grad():
        silent = tsum(mul(w, w))
    w.grad = None
    try:
        backward(silent)
    except Exception as exc:  # nothing was taped, so there is nothing to walk
        print(f"backward inside no_grad context fails as expected: {type(exc).__name__}")
    else:
        print(f"w.grad stays {w.grad} — the no_grad computation left no trace")


if __name__ == "__main__":
    main()
