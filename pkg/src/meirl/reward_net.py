"""Two-stage dilated-conv reward network and its exact backward pass.

Stage 1 maps the five terrain channels to 25 feature maps through four 3x3
layers with dilations 1..4 (leaky ReLU after the first three, linear output),
for a 21x21 receptive field. Stage 2 maps the 30-channel input stack (features
plus positional and kinematic channels) through three 3x3 layers down to the
scalar reward map. Variants reuse the same machinery: an env-only net that
drops stage 2 and ends in a 1-channel head, and an action head with 4 output
channels for direct policy cloning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .kinematics import InputStack, N_STACK_CHANNELS
from .nn import ConvLayer, conv2d_backward, conv2d_forward, kaiming_conv, leaky_relu, leaky_relu_grad

STAGE1_WIDTHS = (16, 24, 24, 25)
STAGE1_DILATIONS = (1, 2, 3, 4)
STAGE2_WIDTHS = (16, 8)
ENV_CHANNELS = 5

KINDS = ("two_stage", "env_only", "action_head")


@dataclass
class RewardNet:
    kind: str
    stage1: list = field(default_factory=list)  # [ConvLayer]
    stage2: list = field(default_factory=list)
    stage1_acts: tuple = ()
    stage2_acts: tuple = ()

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.stage1):
            out[f"s1.{i}.kernel"] = layer.kernel
            out[f"s1.{i}.bias"] = layer.bias
        for i, layer in enumerate(self.stage2):
            out[f"s2.{i}.kernel"] = layer.kernel
            out[f"s2.{i}.bias"] = layer.bias
        return out

    def arch_meta(self) -> dict:
        return {
            "kind": self.kind,
            "stage1": [[l.out_channels, l.in_channels, l.kernel.shape[2], l.dilation]
                       for l in self.stage1],
            "stage2": [[l.out_channels, l.in_channels, l.kernel.shape[2], l.dilation]
                       for l in self.stage2],
        }


def build_net(kind: str = "two_stage", seed: int = 0, env_channels: int = ENV_CHANNELS) -> RewardNet:
    """Seeded Kaiming init of one of the three architecture variants."""
    if kind not in KINDS:
        raise ConfigError(f"unknown net kind {kind!r}, expected one of {KINDS}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    net = RewardNet(kind=kind)
    if kind == "env_only":
        widths = STAGE1_WIDTHS[:-1] + (1,)
    else:
        widths = STAGE1_WIDTHS
    in_ch = env_channels
    for width, dil in zip(widths, STAGE1_DILATIONS):
        net.stage1.append(kaiming_conv(rng, in_ch, width, k=3, dilation=dil))
        in_ch = width
    net.stage1_acts = (True,) * (len(widths) - 1) + (False,)
    if kind != "env_only":
        head = 4 if kind == "action_head" else 1
        in_ch = N_STACK_CHANNELS
        for width in STAGE2_WIDTHS + (head,):
            net.stage2.append(kaiming_conv(rng, in_ch, width, k=3, dilation=1))
            in_ch = width
        net.stage2_acts = (True,) * len(STAGE2_WIDTHS) + (False,)
        if kind == "action_head":
            # small-weight head so the initial policy is near uniform and the
            # cloning loss starts at about ln 4
            net.stage2[-1].kernel *= 0.1
    return net


def net_from_store(meta: dict, params: dict) -> RewardNet:
    """Rebuild a net around checkpointed parameter arrays, validating shapes."""
    arch = meta.get("arch")
    if not arch or arch.get("kind") not in KINDS:
        raise ConfigError("checkpoint carries no usable architecture record")
    net = RewardNet(kind=arch["kind"])
    for stage_name, target in (("stage1", net.stage1), ("stage2", net.stage2)):
        for i, (out_ch, in_ch, k, dil) in enumerate(arch.get(stage_name, [])):
            prefix = {"stage1": "s1", "stage2": "s2"}[stage_name]
            kname, bname = f"{prefix}.{i}.kernel", f"{prefix}.{i}.bias"
            if kname not in params or bname not in params:
                raise ConfigError(f"checkpoint missing {kname} / {bname}")
            kernel, bias = params[kname], params[bname]
            if kernel.shape != (out_ch, in_ch, k, k) or bias.shape != (out_ch,):
                raise ConfigError(
                    f"checkpoint shape mismatch for {kname}: got {kernel.shape}, "
                    f"arch says ({out_ch}, {in_ch}, {k}, {k})"
                )
            target.append(ConvLayer(kernel=kernel, bias=bias, dilation=dil))
    net.stage1_acts = (True,) * (len(net.stage1) - 1) + (False,)
    if net.stage2:
        net.stage2_acts = (True,) * (len(net.stage2) - 1) + (False,)
    return net


# ---------------------------------------------------------------------------
# forward / backward over a list of layers

def _stack_forward(layers, acts, x):
    caches = []
    h = x
    for layer, act in zip(layers, acts):
        z = conv2d_forward(h, layer)
        caches.append((h, z if act else None))
        h = leaky_relu(z) if act else z
    return h, caches


def _stack_backward(layers, acts, caches, grad):
    grads = {}
    g = grad
    for i in reversed(range(len(layers))):
        x_in, z = caches[i]
        if acts[i]:
            g = leaky_relu_grad(z, g)
        g, gk, gb = conv2d_backward(x_in, layers[i], g)
        grads[f"{i}.kernel"] = gk
        grads[f"{i}.bias"] = gb
    return g, grads


def _prefixed(grads: dict, prefix: str) -> dict:
    return {f"{prefix}.{k}": v for k, v in grads.items()}


def stage1_forward(net: RewardNet, env: np.ndarray) -> np.ndarray:
    env = np.asarray(env, dtype=np.float64)
    if env.ndim != 3 or env.shape[0] != net.stage1[0].in_channels:
        raise ConfigError(f"env input must be ({net.stage1[0].in_channels}, rows, cols), got {env.shape}")
    out, _ = _stack_forward(net.stage1, net.stage1_acts, env)
    return out


def reward_forward(net: RewardNet, stack: InputStack) -> np.ndarray:
    """Stage-2 reward map from an already-built input stack."""
    if net.kind != "two_stage":
        raise ConfigError(f"reward_forward needs a two_stage net, got {net.kind!r}")
    out, _ = _stack_forward(net.stage2, net.stage2_acts, stack.channels)
    return out[0]


def reward_backward(net: RewardNet, stack: InputStack, grad_reward: np.ndarray) -> dict:
    """Parameter gradients for d(loss)/d(reward map) = grad_reward.

    Re-runs both stages to rebuild activations, then backpropagates through
    stage 2 and on through the 25 learned channels into stage 1. The positional
    and kinematic channels absorb no parameters, so their slice of the gradient
    is dropped.
    """
    if net.kind != "two_stage":
        raise ConfigError(f"reward_backward needs a two_stage net, got {net.kind!r}")
    grad_reward = np.asarray(grad_reward, dtype=np.float64)
    rows, cols = stack.channels.shape[1:]
    if grad_reward.shape != (rows, cols):
        raise ConfigError(f"grad shape {grad_reward.shape} != reward map ({rows}, {cols})")
    _, s2_caches = _stack_forward(net.stage2, net.stage2_acts, stack.channels)
    g_channels, s2_grads = _stack_backward(net.stage2, net.stage2_acts, s2_caches,
                                           grad_reward[None, :, :])
    _, s1_caches = _stack_forward(net.stage1, net.stage1_acts, stack.env)
    _, s1_grads = _stack_backward(net.stage1, net.stage1_acts, s1_caches, g_channels[:25])
    out = _prefixed(s1_grads, "s1")
    out.update(_prefixed(s2_grads, "s2"))
    return out


def reward_from_env(net: RewardNet, env: np.ndarray) -> np.ndarray:
    """Env-only variant: the stage-1 head is the reward map."""
    if net.kind != "env_only":
        raise ConfigError(f"reward_from_env needs an env_only net, got {net.kind!r}")
    out, _ = _stack_forward(net.stage1, net.stage1_acts, env)
    return out[0]


def reward_backward_env(net: RewardNet, env: np.ndarray, grad_reward: np.ndarray) -> dict:
    if net.kind != "env_only":
        raise ConfigError(f"reward_backward_env needs an env_only net, got {net.kind!r}")
    grad_reward = np.asarray(grad_reward, dtype=np.float64)
    _, caches = _stack_forward(net.stage1, net.stage1_acts, env)
    _, grads = _stack_backward(net.stage1, net.stage1_acts, caches, grad_reward[None, :, :])
    return _prefixed(grads, "s1")


def action_logits(net: RewardNet, stack: InputStack) -> np.ndarray:
    """(4, rows, cols) logits of the cloning head."""
    if net.kind != "action_head":
        raise ConfigError(f"action_logits needs an action_head net, got {net.kind!r}")
    out, _ = _stack_forward(net.stage2, net.stage2_acts, stack.channels)
    return out


def action_head_backward(net: RewardNet, stack: InputStack, grad_logits: np.ndarray) -> dict:
    if net.kind != "action_head":
        raise ConfigError(f"action_head_backward needs an action_head net, got {net.kind!r}")
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    _, s2_caches = _stack_forward(net.stage2, net.stage2_acts, stack.channels)
    g_channels, s2_grads = _stack_backward(net.stage2, net.stage2_acts, s2_caches, grad_logits)
    _, s1_caches = _stack_forward(net.stage1, net.stage1_acts, stack.env)
    _, s1_grads = _stack_backward(net.stage1, net.stage1_acts, s1_caches, g_channels[:25])
    out = _prefixed(s1_grads, "s1")
    out.update(_prefixed(s2_grads, "s2"))
    return out


def zero_kinematic_input_weights(net: RewardNet) -> None:
    """Ablation hook: silence the dx/dy/kappa channels at the stage-2 entry, in place."""
    if not net.stage2:
        raise ConfigError("net has no second stage")
    net.stage2[0].kernel[:, 27:, :, :] = 0.0
