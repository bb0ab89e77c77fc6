"""AdamW-style optimizer: Adam moments with decoupled weight decay."""

import numpy as np

__all__ = ["AdamW"]


class AdamW:
    def __init__(self, named_params, lr=1e-4, weight_decay=1e-4,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state_dict(self):
        state = {"step": np.array(float(self.t))}
        for name, _ in self.params:
            state[f"m/{name}"] = self.m[name]
            state[f"v/{name}"] = self.v[name]
        return state

    def load_state(self, state):
        if "step" in state:
            self.t = int(float(state["step"]))
        for name, p in self.params:
            if f"m/{name}" in state:
                self.m[name] = np.asarray(state[f"m/{name}"], dtype=np.float64).reshape(p.shape)
            if f"v/{name}" in state:
                self.v[name] = np.asarray(state[f"v/{name}"], dtype=np.float64).reshape(p.shape)
