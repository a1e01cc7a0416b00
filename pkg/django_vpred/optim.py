import numpy as np


class AdamW:
    """
    Adam with decoupled weight decay, updating a dict of arrays in place.
    Linear warm-up over ``warmup_steps``, then a constant learning rate.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.95), eps=1e-8, weight_decay=0.0, warmup_steps=0,
                 grad_clip=None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def current_lr(self):
        if self.warmup_steps and self.step_count <= self.warmup_steps:
            return self.lr * self.step_count / self.warmup_steps
        return self.lr

    def step(self, grads):
        self.step_count += 1
        lr = self.current_lr()
        scale = 1.0
        if self.grad_clip:
            # Sorted names keep the reduction order fixed
            norm = np.sqrt(sum(float(np.sum(grads[name] ** 2)) for name in sorted(grads) if name in self.params))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, value in self.params.items():
            grad = grads[name] * scale
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad ** 2
            if self.weight_decay:
                value -= lr * self.weight_decay * value
            value -= lr * (self.m[name] / correction1) / (np.sqrt(self.v[name] / correction2) + self.eps)
