import numpy as np
import pytest
import torch
import torch.nn.functional as F
from skimage.metrics import structural_similarity

from app.errors import PreconditionError
from app.models import MetricReport, MetricRow
from app.network.extractors import RandomConvExtractor
from app.services.metrics import PSNR_SENTINEL_DB, lpips, lpips_per_image, psnr, ssim


def _images(seed=0, shape=(1, 3, 32, 32)):
    generator = torch.Generator().manual_seed(seed)
    a = torch.rand(shape, generator=generator, dtype=torch.float64)
    b = torch.rand(shape, generator=generator, dtype=torch.float64)
    return a, b


def test_psnr_examples():
    """Sentinel on identity, 20 dB at MSE 0.01 and 0 dB at MSE 1."""
    target = torch.zeros(1, 3, 8, 8, dtype=torch.float64)
    assert psnr(target, target) == PSNR_SENTINEL_DB == 100.0
    assert psnr(torch.full_like(target, 0.1), target) == pytest.approx(20.0, abs=1e-9)
    assert psnr(torch.ones_like(target), target) == pytest.approx(0.0, abs=1e-12)


def test_psnr_matches_definition():
    """10 log10(1 / MSE) for hand-set errors."""
    target = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    for value in (0.05, 0.2, 0.5):
        assert psnr(torch.full_like(target, value), target) == pytest.approx(10 * np.log10(1 / value ** 2), abs=1e-9)


def test_psnr_decreases_with_noise():
    """More noise means lower PSNR."""
    target, _ = _images()
    noise = torch.randn(target.shape, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    values = [psnr(target + sigma * noise, target) for sigma in (0.01, 0.05, 0.1)]
    assert values[0] > values[1] > values[2]


def test_ssim_identity_and_symmetry():
    """ssim(x, x) is 1 and ssim is symmetric."""
    a, b = _images()
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9


def test_ssim_of_constants_closed_form():
    """Constant images a=0.2, b=0.8 give (2ab + C1) / (a^2 + b^2 + C1)."""
    a = torch.full((1, 3, 16, 16), 0.2, dtype=torch.float64)
    b = torch.full((1, 3, 16, 16), 0.8, dtype=torch.float64)
    c1 = 0.01 ** 2
    expected = (2 * 0.2 * 0.8 + c1) / (0.2 ** 2 + 0.8 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_matches_skimage():
    """Ten random 64x64 pairs agree with scikit-image within 1e-4."""
    for seed in range(10):
        a, b = _images(seed, shape=(1, 3, 64, 64))
        b = (0.6 * a + 0.4 * b).clamp(0, 1)
        reference = structural_similarity(
            a[0].permute(1, 2, 0).numpy(),
            b[0].permute(1, 2, 0).numpy(),
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
            channel_axis=2,
        )
        assert ssim(a, b) == pytest.approx(reference, abs=1e-4)


def test_ssim_rejects_images_smaller_than_window():
    """Images under 11x11 cannot be scored."""
    a = torch.rand(1, 3, 8, 8)
    with pytest.raises(PreconditionError):
        ssim(a, a)


def test_lpips_examples():
    """Zero on identity, nonnegative, symmetric and absent without an extractor."""
    extractor = RandomConvExtractor(seed=0)
    a, b = _images(shape=(1, 3, 16, 16))
    assert lpips(a, a, extractor) == 0.0
    ab = lpips(a, b, extractor)
    assert ab >= 0
    assert ab == pytest.approx(lpips(b, a, extractor), abs=1e-12)
    assert lpips(a, b, None) is None


def test_lpips_matches_recomputation():
    """Seeded extractor value equals a standalone recomputation."""
    extractor = RandomConvExtractor(seed=2)
    a, b = _images(shape=(1, 3, 16, 16), seed=3)
    value = lpips(a, b, extractor)

    def features(x):
        h = x * 2.0 - 1.0
        out = []
        for i, stage in enumerate(extractor.stages):
            conv = stage[0]
            h = torch.relu(F.conv2d(h, conv.weight, conv.bias, stride=1 if i == 0 else 2, padding=1))
            out.append(h)
        return out

    expected = 0.0
    for fa, fb in zip(features(a), features(b)):
        na = fa / (fa.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)
        nb = fb / (fb.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)
        expected += ((na - nb) ** 2).sum(dim=1).mean().item()
    assert value == pytest.approx(expected, abs=1e-6)


def test_lpips_stage_weights():
    """Zero weights silence stages; negative weights are rejected."""
    extractor = RandomConvExtractor(seed=0, widths=(4, 4, 4))
    a, b = _images(shape=(1, 3, 16, 16))
    zero = {name: [0.0] * 4 for name in extractor.stage_names}
    assert lpips_per_image(a, b, extractor, zero).item() == 0.0
    with pytest.raises(PreconditionError):
        lpips_per_image(a, b, extractor, {"conv1": [-1.0, 1.0, 1.0, 1.0]})


def test_report_aggregate_is_mean_of_rows():
    """Aggregates equal per-image means; LPIPS is absent if any row lacks it."""
    rows = [MetricRow(id="a", psnr=20.0, ssim=0.5, lpips=0.1), MetricRow(id="b", psnr=30.0, ssim=0.7, lpips=0.3)]
    report = MetricReport.from_rows(rows)
    assert report.aggregate.psnr == pytest.approx(25.0, abs=1e-9)
    assert report.aggregate.ssim == pytest.approx(0.6, abs=1e-9)
    assert report.aggregate.lpips == pytest.approx(0.2, abs=1e-9)
    assert report.aggregate.count == 2
    partial = MetricReport.from_rows([rows[0], MetricRow(id="c", psnr=10.0, ssim=0.1)])
    assert partial.aggregate.lpips is None
