"""Double-splitting linearization solvers for doubly-degenerate parabolic equations."""
