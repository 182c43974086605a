import numpy as np
import pytest
import scipy.special

from udrmixer import tensor as T
from udrmixer.model import (
    ConfigError,
    ModelConfig,
    complexity_report,
    count_params,
    estimate_flops,
    ffl_forward,
    ffmb_forward,
    ffml_forward,
    init_params,
    l1_loss,
    param_shapes,
    sfmb_forward,
    sfrl_forward,
    sfrl_stage_names,
    toy_config,
    udr_mixer_forward,
)
from udrmixer.tensor import ShapeError, Tensor


def conv_params(rng, name, cout, cin, k, zero=False, dtype=np.float64):
    if zero:
        w, b = np.zeros((cout, cin, k, k)), np.zeros(cout)
    else:
        w, b = rng.standard_normal((cout, cin, k, k)) * 0.3, rng.standard_normal(cout) * 0.1
    return {f"{name}.weight": Tensor(w.astype(dtype)), f"{name}.bias": Tensor(b.astype(dtype))}


def sfrl_params(rng, prefix, c, stages=3, zero=False):
    p = {}
    for s in sfrl_stage_names(stages):
        p.update(conv_params(rng, f"{prefix}.{s}", c, c, 1, zero))
    return p


def ffl_params(rng, prefix, c, zero=False):
    p = conv_params(rng, f"{prefix}.expand", 2 * c, c, 3, zero)
    p.update(conv_params(rng, f"{prefix}.reduce", c, 2 * c, 1, zero))
    return p


def ffml_params(rng, prefix, c, zero=False):
    p = conv_params(rng, f"{prefix}.mix1", 2 * c, 2 * c, 1, zero)
    p.update(conv_params(rng, f"{prefix}.mix2", 2 * c, 2 * c, 1, zero))
    return p


def ln_params(rng, prefix, c):
    return {f"{prefix}.gamma": Tensor(1 + 0.1 * rng.standard_normal(c)),
            f"{prefix}.beta": Tensor(0.1 * rng.standard_normal(c))}


def np_conv1x1(x, w, b):
    return np.einsum("oc,bchw->bohw", w[:, :, 0, 0], x) + b[None, :, None, None]


# -- SFRL ------------------------------------------------------------------

@pytest.mark.parametrize("stages", [1, 2, 3])
def test_sfrl_zero_weights_halves_input(stages):
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 6, 10, 14)))
    out = sfrl_forward(x, sfrl_params(rng, "s", 6, stages, zero=True), "s", stages)
    assert out.shape == x.shape
    np.testing.assert_allclose(out.data, 0.5 * x.data, atol=1e-7)


def test_sfrl_matches_numpy_oracle():
    rng = np.random.default_rng(1)
    c = 5
    x = rng.standard_normal((1, c, 7, 9))
    p = sfrl_params(rng, "s", c)
    wt = {k: v.data for k, v in p.items()}
    ah, aw = T.interpolation_matrix(7, c), T.interpolation_matrix(9, c)
    f = ah @ x @ aw.T
    gelu = lambda v: v * 0.5 * (1 + scipy.special.erf(v / np.sqrt(2)))
    rot = lambda v: v.transpose(0, 2, 3, 1)
    g = f
    for k in range(2):
        g = rot(gelu(np_conv1x1(g, wt[f"s.gelu{k}.weight"], wt[f"s.gelu{k}.bias"])))
    gate = rot(1 / (1 + np.exp(-np_conv1x1(f, wt["s.gate.weight"], wt["s.gate.bias"]))))
    back_h, back_w = T.interpolation_matrix(c, 7), T.interpolation_matrix(c, 9)
    ref = (back_h @ (g + gate) @ back_w.T) * x
    np.testing.assert_allclose(sfrl_forward(Tensor(x), p, "s").data, ref, atol=1e-10)


def test_sfrl_gradient():
    rng = np.random.default_rng(2)
    p = sfrl_params(rng, "s", 8)
    x = Tensor(rng.standard_normal((1, 8, 8, 8)))
    wts = Tensor(rng.standard_normal((1, 8, 8, 8)))
    f = lambda v: T.sum_(T.mul(sfrl_forward(v, p, "s"), wts))
    assert T.grad_check(f, x) <= 1e-4


def test_sfrl_size_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        ModelConfig(c_main=16, c_level2=32, sfrl_size=16)
    ModelConfig(c_main=16, c_level2=16, sfrl_size=16)


# -- FFL / FFML ------------------------------------------------------------

def test_ffl_zero_and_shape():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((1, 48, 16, 16)))
    assert ffl_forward(x, ffl_params(rng, "f", 48, zero=True), "f").data.max() == 0.0
    assert ffl_forward(x, ffl_params(rng, "f", 48), "f").shape == (1, 48, 16, 16)


def test_ffl_matches_primitive_composition():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 4, 6, 6)))
    p = ffl_params(rng, "f", 4)
    ref = T.conv2d(T.gelu(T.conv2d(x, p["f.expand.weight"], p["f.expand.bias"])),
                   p["f.reduce.weight"], p["f.reduce.bias"])
    np.testing.assert_allclose(ffl_forward(x, p, "f").data, ref.data, atol=1e-6)


def test_ffml_zero_weights_gives_zero():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((1, 3, 8, 6)))
    out = ffml_forward(x, ffml_params(rng, "m", 3, zero=True), "m")
    assert out.shape == x.shape
    assert np.max(np.abs(out.data)) <= 1e-7


@pytest.mark.parametrize("w", [8, 7])
def test_ffml_matches_numpy_fft_oracle(w):
    """Oracle uses the full numpy DFT and an explicit Hermitian extension."""
    rng = np.random.default_rng(6)
    c, h = 3, 6
    x = rng.standard_normal((1, c, h, w))
    p = ffml_params(rng, "m", c)
    wt = {k: v.data for k, v in p.items()}
    full = np.fft.fft2(x)
    half = full[..., : w // 2 + 1]
    st = np.concatenate([half.real, half.imag], axis=1)
    st = np_conv1x1(np.maximum(np_conv1x1(st, wt["m.mix1.weight"], wt["m.mix1.bias"]), 0),
                    wt["m.mix2.weight"], wt["m.mix2.bias"])
    z = st[:, :c] + 1j * st[:, c:]
    ext = np.zeros((1, c, h, w), dtype=complex)
    ext[..., : w // 2 + 1] = z
    for k in range(h):
        for l in range(w // 2 + 1, w):
            ext[..., k, l] = np.conj(z[..., (-k) % h, w - l])
    # bins that are their own mirror only keep their real-symmetric part
    for l in {0, w // 2} if w % 2 == 0 else {0}:
        col = ext[..., :, l].copy()
        ext[..., :, l] = 0.5 * (col + np.conj(col[..., (-np.arange(h)) % h]))
    ref = np.fft.ifft2(ext).real * x
    np.testing.assert_allclose(ffml_forward(Tensor(x), p, "m").data, ref, atol=1e-5)


# -- blocks ----------------------------------------------------------------

def _sfmb_params(rng, prefix, c, zero_ffl=False):
    p = ln_params(rng, f"{prefix}.ln1", c)
    p.update(sfrl_params(rng, f"{prefix}.sfrl", c))
    p.update(ln_params(rng, f"{prefix}.ln2", c))
    p.update(ffl_params(rng, f"{prefix}.ffl", c, zero_ffl))
    return p


def _ffmb_params(rng, prefix, c, zero_ffl=False):
    p = ln_params(rng, f"{prefix}.ln1", c)
    p.update(ffml_params(rng, f"{prefix}.ffml", c))
    p.update(ln_params(rng, f"{prefix}.ln2", c))
    p.update(ffl_params(rng, f"{prefix}.ffl", c, zero_ffl))
    return p


def _ln(x, p, name):
    return T.layer_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"])


def test_sfmb_composition_and_zero_ffl():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((2, 6, 8, 10)))
    p = _sfmb_params(rng, "b", 6)
    x1 = x.data + sfrl_forward(_ln(x, p, "b.ln1"), p, "b.sfrl").data
    x2 = x1 + ffl_forward(_ln(Tensor(x1), p, "b.ln2"), p, "b.ffl").data
    out = sfmb_forward(x, p, "b")
    assert out.shape == x.shape
    np.testing.assert_allclose(out.data, x2, atol=1e-6)
    pz = _sfmb_params(rng, "b", 6, zero_ffl=True)
    xprime = x.data + sfrl_forward(_ln(x, pz, "b.ln1"), pz, "b.sfrl").data
    np.testing.assert_allclose(sfmb_forward(x, pz, "b").data, xprime, atol=1e-12)


def test_ffmb_composition_and_zero_ffl():
    rng = np.random.default_rng(8)
    y = Tensor(rng.standard_normal((1, 4, 8, 8)))
    p = _ffmb_params(rng, "a", 4)
    y1 = y.data + ffml_forward(_ln(y, p, "a.ln1"), p, "a.ffml").data
    y2 = y1 + ffl_forward(_ln(Tensor(y1), p, "a.ln2"), p, "a.ffl").data
    np.testing.assert_allclose(ffmb_forward(y, p, "a").data, y2, atol=1e-6)
    pz = _ffmb_params(rng, "a", 4, zero_ffl=True)
    yprime = y.data + ffml_forward(_ln(y, pz, "a.ln1"), pz, "a.ffml").data
    np.testing.assert_allclose(ffmb_forward(y, pz, "a").data, yprime, atol=1e-12)


@pytest.mark.parametrize("block", ["ffl", "ffml", "sfmb", "ffmb"])
def test_block_gradients(block):
    rng = np.random.default_rng(9)
    c = 4
    make = {"ffl": (ffl_params, ffl_forward), "ffml": (ffml_params, ffml_forward),
            "sfmb": (_sfmb_params, sfmb_forward), "ffmb": (_ffmb_params, ffmb_forward)}
    pf, fwd = make[block]
    p = pf(rng, "b", c)
    x = Tensor(rng.standard_normal((2, c, 8, 8)))
    wts = Tensor(rng.standard_normal(x.shape))
    f = lambda v: T.sum_(T.mul(fwd(v, p, "b"), wts))
    assert T.grad_check(f, x) <= 1e-4


# -- full model ------------------------------------------------------------

def test_model_shape_r4():
    cfg = toy_config(width=8, blocks=(1, 1, 1), r=4)
    params = init_params(cfg, seed=0)
    x = Tensor(np.random.default_rng(10).random((1, 3, 64, 64)).astype(np.float32))
    with T.no_grad():
        assert udr_mixer_forward(x, params, cfg).shape == (1, 3, 64, 64)


def test_model_rejects_bad_size():
    cfg = toy_config(width=8, blocks=(1, 1, 1), r=4)
    params = init_params(cfg)
    with pytest.raises(ShapeError, match="divisible by 8"):
        udr_mixer_forward(Tensor(np.zeros((1, 3, 66, 66), np.float32)), params, cfg)


def test_default_config_param_band():
    n = count_params(ModelConfig())
    assert 3.0e6 <= n <= 7.0e6


@pytest.mark.parametrize("cfg", [ModelConfig(), toy_config(), toy_config(r=4, aux_blocks=0),
                                 toy_config(sfrl_stages=1), ModelConfig(ffl_expand=3, aux_blocks=2)])
def test_count_params_matches_instantiated(cfg):
    params = init_params(cfg)
    assert count_params(cfg) == sum(p.size for p in params.values())
    assert len(params) == len(param_shapes(cfg))


def test_single_conv_accounting():
    from udrmixer.model.complexity import ComplexityReport, _conv
    rep = ComplexityReport(64, 64)
    _conv(rep, "embed", 3, 48, 3, 64, 64)
    assert rep.total_params == 1344
    assert rep.total_flops == 10_616_832


@pytest.mark.parametrize("cfg", [toy_config(width=8, blocks=(1, 1, 1)), toy_config(width=8, r=4)])
def test_flop_estimate_matches_executed_ops(cfg):
    """Counters in the conv/FFT primitives give the convolution and FFT totals."""
    params = init_params(cfg)
    x = Tensor(np.zeros((1, 3, 32, 48), np.float32))
    with T.no_grad(), T.count_flops() as c:
        udr_mixer_forward(x, params, cfg)
    assert c["conv"] + round(c["fft"]) == estimate_flops(cfg, 32, 48)


def test_report_layers_sum_to_totals():
    rep = complexity_report(ModelConfig(), 1024, 1024)
    assert sum(l.params for l in rep.layers) == rep.total_params == count_params(ModelConfig())
    assert 100e9 <= rep.total_flops <= 400e9


def test_stage_knob_is_subset_plus_extension():
    names = [set(n for n, _ in param_shapes(toy_config(sfrl_stages=s))) for s in (1, 2, 3)]
    assert names[0] < names[1] < names[2]
    counts = [count_params(toy_config(sfrl_stages=s)) for s in (1, 2, 3)]
    assert counts[0] < counts[1] < counts[2]


def test_model_gradient_every_parameter():
    cfg = toy_config(width=8, blocks=(1, 1, 1), r=2)
    params = init_params(cfg, seed=1, dtype=np.float64)
    rng = np.random.default_rng(11)
    x = Tensor(rng.random((1, 3, 16, 16)))
    y = Tensor(rng.random((1, 3, 16, 16)))
    worst = 0.0
    for name, p in params.items():
        f = lambda v: l1_loss(udr_mixer_forward(x, params, cfg), y)
        worst = max(worst, T.grad_check(f, p, eps=1e-6, max_entries=3, seed=len(name)))
    assert worst <= 1e-3


# -- loss ------------------------------------------------------------------

def test_l1_loss():
    rng = np.random.default_rng(12)
    a, b = rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
    assert l1_loss(Tensor(a), Tensor(a)).item() == 0.0
    assert l1_loss(Tensor(np.ones((1, 3, 2, 2))), Tensor(np.zeros((1, 3, 2, 2)))).item() == 1.0
    assert abs(l1_loss(Tensor(a), Tensor(b)).item() - np.mean(np.abs(a - b))) <= 1e-7
    with pytest.raises(ShapeError):
        l1_loss(Tensor(a), Tensor(b[:, :2]))
