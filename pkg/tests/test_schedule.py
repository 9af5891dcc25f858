import pytest

from app.models import TrainConfig
from app.services.schedule import cyclic_lr


@pytest.fixture
def schedule():
    return TrainConfig(lr_max=3e-4, lr_min=3e-5, warmup_epochs=5, cycle_epochs=50)


def test_ramp_endpoints(schedule):
    """0 at step 0 and lr_max at the end of warm-up."""
    assert cyclic_lr(0, schedule) == 0.0
    assert cyclic_lr(5, schedule) == pytest.approx(3e-4, abs=1e-15)
    assert cyclic_lr(2, schedule) == pytest.approx(3e-4 * 2 / 5)


def test_trough_at_each_half_period(schedule):
    """lr_min halfway through every cycle."""
    for k in range(3):
        assert cyclic_lr(5 + 25 + 50 * k, schedule) == pytest.approx(3e-5, abs=1e-15)
        assert cyclic_lr(5 + 50 * k, schedule) == pytest.approx(3e-4, abs=1e-15)


def test_periodic_after_warmup(schedule):
    """lr(step) == lr(step + cycle) over three periods."""
    for step in range(5, 5 + 3 * 50):
        assert cyclic_lr(step, schedule) == cyclic_lr(step + 50, schedule)


def test_bounded(schedule):
    """Values stay within [0, lr_max]."""
    values = [cyclic_lr(s, schedule) for s in range(300)]
    assert min(values) >= 0 and max(values) <= 3e-4 + 1e-18


def test_negative_step_rejected(schedule):
    """Steps are non-negative."""
    with pytest.raises(ValueError):
        cyclic_lr(-1, schedule)


def test_no_warmup_starts_at_peak():
    """Without warm-up the schedule starts at lr_max."""
    cfg = TrainConfig(warmup_epochs=0, cycle_epochs=4, lr_max=1.0, lr_min=0.5)
    assert [cyclic_lr(s, cfg) for s in range(5)] == [1.0, 0.75, 0.5, 0.75, 1.0]
