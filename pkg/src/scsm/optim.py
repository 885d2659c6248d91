"""Plain SGD with classical momentum and decoupled-from-nothing weight
decay (decay is added to the gradient, the usual L2 form)."""


class SGD:
    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.params = [p[1] if isinstance(p, tuple) else p for p in params]
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {}

    def zero_grad(self):
        for t in self.params:
            t.zero_grad()

    def step(self):
        for t in self.params:
            if not t.requires_grad or t.grad is None:
                continue
            g = t.grad
            if self.weight_decay:
                g = g + self.weight_decay * t.data
            v = self._velocity.get(id(t))
            if self.momentum:
                if v is None:
                    v = g.copy()
                else:
                    v *= self.momentum
                    v += g
                self._velocity[id(t)] = v
            else:
                v = g
            t.data -= self.lr * v
