from pathlib import Path

import numpy as np
from pytest import approx, fixture, mark, param, raises

import dataeval
import diffcore
import latlab
import nastrain
import speedmodel
import srnet
from diffcore import Adam, Tensor
from nastrain import SearchConfig, SearchError, TrainState
from speedmodel import NormalizationSpec, SpeedMLP
from srnet import SupernetModel

_CAPS = (4, 6, 5, 4)


def _linear_speed(ms: float = 10.0, caps: tuple[int, ...] = _CAPS) -> SpeedMLP:
    """``ms * sum(widths / caps)``: monotone, with a gradient on every width."""
    layers = [
        (Tensor(np.eye(4), requires_grad=True), Tensor(np.zeros(4), requires_grad=True)),
        (Tensor(np.ones((1, 4)), requires_grad=True), Tensor(np.zeros(1), requires_grad=True)),
    ]
    return SpeedMLP(layers=layers, norm=NormalizationSpec(divisors=caps, latency_scale=ms))


def _model(seed: int = 0, blocks: int = 2) -> SupernetModel:
    return SupernetModel.build(scale=2, blocks=blocks, trunk_width=4, widths=(6, 5), seed=seed)


def _cfg(**kwargs) -> SearchConfig:
    defaults = dict(v_t=1.0, gamma=0.01, search_epochs=2, finetune_epochs=2, lr=1e-3, batch_size=4, patch=8)
    return SearchConfig(**{**defaults, **kwargs})


@fixture(scope="module")
def pairs() -> list[dataeval.PatchPair]:
    return nastrain.make_patches(dataeval.synthetic_corpus(2, (40, 40), seed=3), scale=2, patch=8, count=12, seed=1)


def _speed_arrays(speed: SpeedMLP) -> list[np.ndarray]:
    return [param.data.copy() for param in speed.parameters()]


def _arrays(model: SupernetModel) -> dict[str, np.ndarray]:
    return {name: param.data.copy() for name, param in model.named_parameters()}


class Test_speed_loss:
    @staticmethod
    @mark.parametrize(
        "v_n, v_t, expected, grad",
        [
            param(30.0, 40.0, 0.0, 0.0, id="inactive"),
            param(50.0, 40.0, 10.0, 1.0, id="active"),
            param(40.0, 40.0, 0.0, 0.0, id="boundary"),
            param(1e6, float("inf"), 0.0, 0.0, id="unbounded"),
        ],
    )
    def test_examples(v_n: float, v_t: float, expected: float, grad: float):
        v = Tensor(np.array(v_n), requires_grad=True)
        loss = nastrain.speed_loss(v, v_t)
        loss.backward()
        assert loss.item() == expected
        assert (0.0 if v.grad is None else float(v.grad)) == grad

    @staticmethod
    def test_hinge_grid():
        rng = np.random.default_rng(0)
        pairs = list(rng.uniform(0, 100, size=(90, 2))) + [(value, value) for value in rng.uniform(0, 100, 10)]
        for v_n, v_t in pairs:
            v = Tensor(np.array(v_n), requires_grad=True)
            loss = nastrain.speed_loss(v, v_t)
            loss.backward()
            assert loss.item() == max(0.0, v_n - v_t)
            assert (loss.item() == 0) == (v_n <= v_t)
            assert float(v.grad) == (1.0 if v_n > v_t else 0.0)


class Test_total_loss:
    @staticmethod
    @mark.parametrize(
        "l_sr, l_spd, gamma, expected",
        [
            param(0.3, 12.0, 0.0, 0.3, id="no_speed_weight"),
            param(0.1, 10.0, 0.01, 0.2, id="weighted"),
            param(0.25, 0.0, 0.01, 0.25, id="inactive_hinge"),
        ],
    )
    def test_values(l_sr: float, l_spd: float, gamma: float, expected: float):
        assert nastrain.total_loss(l_sr, l_spd, gamma).item() == approx(expected, abs=1e-12)

    @staticmethod
    def test_gradient_split():
        l_sr = Tensor(np.array(0.5), requires_grad=True)
        l_spd = Tensor(np.array(3.0), requires_grad=True)
        nastrain.total_loss(l_sr, l_spd, 0.01).backward()
        assert float(l_sr.grad) == 1.0
        assert float(l_spd.grad) == approx(0.01)


class Test_SearchConfig:
    @staticmethod
    @mark.parametrize(
        "kwargs",
        [
            param({"v_t": 0.0}, id="budget"),
            param({"gamma": -0.1}, id="gamma"),
            param({"search_epochs": 0}, id="epochs"),
            param({"mode": "all"}, id="mode"),
            param({"arch_lr": -1.0}, id="arch_lr"),
            param({"scale": 3}, id="scale"),
        ],
    )
    def test_rejects(kwargs: dict):
        with raises(ValueError):
            SearchConfig(**kwargs)

    @staticmethod
    def test_architecture_lr():
        assert SearchConfig(lr=1e-4).architecture_lr == 1e-4
        assert SearchConfig(lr=1e-4, arch_lr=0.05).architecture_lr == 0.05

    @staticmethod
    def test_unbounded_budget():
        assert SearchConfig(v_t=float("inf")).v_t == float("inf")


class Test_loader:
    @staticmethod
    def test_make_patches_spreads_count():
        images = dataeval.synthetic_corpus(3, (32, 32))
        pairs = nastrain.make_patches(images, scale=2, patch=8, count=7)
        assert len(pairs) == 7
        assert all(pair.lr.shape == (8, 8, 3) and pair.hr.shape == (16, 16, 3) for pair in pairs)
        assert nastrain.make_patches(images, 2, 8, 0) == []

    @staticmethod
    def test_batches(pairs):
        loader = nastrain.PatchLoader(pairs, batch_size=5, seed=2)
        batches = list(loader.epoch(1))
        assert len(batches) == len(loader) == 3
        assert batches[0][0].shape == (5, 3, 8, 8)
        assert batches[0][1].shape == (5, 3, 16, 16)
        assert batches[-1][0].shape[0] == 2
        assert sum(lr.shape[0] for lr, _ in batches) == len(pairs)

    @staticmethod
    def test_order_depends_on_seed_and_epoch(pairs):
        loader = nastrain.PatchLoader(pairs, batch_size=12, seed=2)
        first = next(loader.epoch(1))[0]
        np.testing.assert_array_equal(first, next(nastrain.PatchLoader(pairs, 12, 2).epoch(1))[0])
        assert not np.array_equal(first, next(loader.epoch(2))[0])


class Test_trainable_groups:
    @staticmethod
    @mark.parametrize(
        "mode, groups",
        [
            param("both", {"weights", "masks", "alphas"}, id="both"),
            param("width", {"weights", "masks"}, id="width"),
            param("depth", {"weights", "alphas"}, id="depth"),
            param("none", {"weights"}, id="none"),
        ],
    )
    def test_partition(mode: str, groups: set[str]):
        model = _model()
        assert set(nastrain.trainable_groups(model, mode)) == groups

    @staticmethod
    def test_frozen_alphas_keep_every_block():
        model = _model()
        model.blocks[0].alpha_s.data = np.array(5.0)
        nastrain.trainable_groups(model, "width")
        assert all(blk.active for blk in model.blocks)
        assert not model.blocks[0].alpha_s.requires_grad

    @staticmethod
    def test_frozen_masks_stop_gradients():
        model = _model()
        nastrain.trainable_groups(model, "depth")
        assert not any(param.requires_grad for param in model.parameters("masks"))


class Test_search_step:
    @staticmethod
    def test_speed_weights_untouched(pairs):
        model, speed, cfg = _model(), _linear_speed().freeze(), _cfg(v_t=0.5, gamma=1.0)
        before = _speed_arrays(speed)
        optimizer = nastrain.make_optimizer(model, cfg)
        state = TrainState()
        for batch in nastrain.PatchLoader(pairs, 4).epoch(1):
            state = nastrain.search_step(batch, model, speed, cfg, optimizer, state)
        assert state.step == 3
        for old, new in zip(before, _speed_arrays(speed)):
            np.testing.assert_array_equal(old, new)

    @staticmethod
    def test_architecture_only_step(pairs):
        model, speed, cfg = _model(), _linear_speed().freeze(), _cfg(v_t=0.5, gamma=1.0)
        before = _arrays(model)
        optimizer = Adam({"masks": model.parameters("masks"), "alphas": model.parameters("alphas")}, lr=0.01)
        batch = next(nastrain.PatchLoader(pairs, 4).epoch(1))
        nastrain.search_step(batch, model, speed, cfg, optimizer, TrainState())
        after = _arrays(model)
        for name in before:
            if name.endswith(".mask") or ".alpha_" in name:
                assert not np.array_equal(before[name], after[name]), name
            else:
                np.testing.assert_array_equal(before[name], after[name])

    @staticmethod
    def test_state_advances(pairs):
        model, speed, cfg = _model(), _linear_speed().freeze(), _cfg(v_t=1.0, gamma=0.01)
        state = nastrain.search_step(
            next(nastrain.PatchLoader(pairs, 4).epoch(1)),
            model,
            speed,
            cfg,
            nastrain.make_optimizer(model, cfg),
            TrainState(epoch=1),
        )
        assert state.step == 1
        assert state.v_n > cfg.v_t
        assert state.l_spd == approx(state.v_n - cfg.v_t)
        assert state.l_total == approx(state.l_sr + 0.01 * state.l_spd)
        assert state.l_total >= state.l_sr

    @staticmethod
    def test_inactive_hinge_adds_no_gradient(pairs):
        lr, hr = next(nastrain.PatchLoader(pairs, 4).epoch(1))
        grads = []
        for with_speed in (False, True):
            model, speed = _model(), _linear_speed().freeze()
            sr, v_n = srnet.model_forward(Tensor(lr), model, speed)
            loss = diffcore.mae_loss(sr, hr)
            if with_speed:
                loss = nastrain.total_loss(loss, nastrain.speed_loss(v_n, 1e9), 0.01)
            loss.backward()
            grads.append([param.grad for param in model.parameters("masks") + model.parameters("alphas")])
        for without, with_hinge in zip(*grads):
            np.testing.assert_array_equal(without, with_hinge)

    @staticmethod
    def test_nan_loss(pairs, mocker):
        mocker.patch("nastrain.src.search.mae_loss", return_value=Tensor(np.array(np.nan)))
        model, speed, cfg = _model(), _linear_speed().freeze(), _cfg()
        with raises(SearchError, match="step 1"):
            nastrain.search_step(
                next(nastrain.PatchLoader(pairs, 4).epoch(1)),
                model,
                speed,
                cfg,
                nastrain.make_optimizer(model, cfg),
                TrainState(epoch=1),
            )


class Test_run_search:
    @staticmethod
    def test_empty_dataset():
        with raises(SearchError):
            nastrain.run_search([], _model(), _linear_speed(), _cfg())

    @staticmethod
    def test_history_and_speed_model(pairs):
        speed = _linear_speed()
        before = _speed_arrays(speed)
        model, history = nastrain.run_search(pairs, _model(), speed, _cfg(search_epochs=3))
        assert [row["epoch"] for row in history] == [1, 2, 3]
        assert {"l_sr", "l_spd", "l_total", "v_n", "active_blocks", "b0_f2", "b1_active"} <= set(history[0])
        assert history[-1]["v_n"] == approx(srnet.snapshot_architecture(model, speed).v_n)
        for old, new in zip(before, _speed_arrays(speed)):
            np.testing.assert_array_equal(old, new)

    @staticmethod
    def test_deterministic(pairs):
        first, history_a = nastrain.run_search(pairs, _model(), _linear_speed(), _cfg())
        second, history_b = nastrain.run_search(pairs, _model(), _linear_speed(), _cfg())
        assert history_a == history_b
        for name, array in _arrays(first).items():
            np.testing.assert_array_equal(array, _arrays(second)[name])

    @staticmethod
    def test_unbounded_budget_never_penalizes(pairs):
        _, history = nastrain.run_search(pairs, _model(), _linear_speed(), _cfg(v_t=float("inf"), search_epochs=3))
        assert all(row["l_spd"] == 0.0 for row in history)

    @staticmethod
    def test_tight_budget_lowers_latency(pairs):
        model, speed = _model(), _linear_speed()
        initial = srnet.snapshot_architecture(model, speed).v_n
        cfg = _cfg(v_t=0.01, gamma=1.0, arch_lr=0.05, search_epochs=3)
        model, history = nastrain.run_search(pairs, model, speed, cfg)
        assert history[-1]["v_n"] < initial

    @staticmethod
    def test_width_mode_keeps_blocks(pairs):
        cfg = _cfg(v_t=0.01, gamma=1.0, arch_lr=0.05, mode="width")
        _, history = nastrain.run_search(pairs, _model(), _linear_speed(), cfg)
        assert all(row["active_blocks"] == 2 for row in history)

    @staticmethod
    def test_warmup_runs_before_search(pairs, mocker):
        model = _model()
        masks = [param.data.copy() for param in model.parameters("masks")]
        search = mocker.patch("nastrain.src.search.search_step", wraps=nastrain.search_step)
        cfg = _cfg(warmup_epochs=1, search_epochs=1, mode="none")
        nastrain.run_search(pairs, model, _linear_speed(), cfg)
        assert search.call_count == 6
        for old, new in zip(masks, model.parameters("masks")):
            np.testing.assert_array_equal(old, new.data)

    @staticmethod
    def test_resume_matches_uninterrupted(pairs, tmp_path: Path):
        full, history = nastrain.run_search(pairs, _model(), _linear_speed(), _cfg(), out_dir=tmp_path / "full")
        assert (tmp_path / "full" / nastrain.STATE_FILE).exists()

        partial, _ = nastrain.run_search(pairs, _model(), _linear_speed(), _cfg(search_epochs=1), tmp_path / "part")
        resumed, resumed_history = nastrain.run_search(
            pairs, partial, _linear_speed(), _cfg(), out_dir=tmp_path / "part", resume=True
        )
        assert [row["epoch"] for row in resumed_history] == [1, 2]
        assert resumed_history[-1] == approx(history[-1])
        for name, array in _arrays(full).items():
            np.testing.assert_array_equal(array, _arrays(resumed)[name])

    @staticmethod
    def test_resume_rejects_other_mode(pairs, tmp_path: Path):
        nastrain.run_search(pairs, _model(), _linear_speed(), _cfg(search_epochs=1), out_dir=tmp_path)
        with raises(srnet.CheckpointError):
            nastrain.run_search(pairs, _model(), _linear_speed(), _cfg(mode="depth"), out_dir=tmp_path, resume=True)

    @staticmethod
    def test_cap_warning(mocker):
        logger = mocker.MagicMock()
        speed = SpeedMLP.build(NormalizationSpec(divisors=(4, 3, 5, 4)))
        nastrain.check_speed_caps(_model(), speed, logger)
        logger.warning.assert_called_once()

    @staticmethod
    def test_clamp_warning_once_per_epoch(pairs, mocker):
        logger = mocker.MagicMock()
        model = SupernetModel.build(scale=2, blocks=2, trunk_width=4, widths=(6, 5), mask_init=(0.9, 1.0), seed=0)
        speed = _linear_speed(caps=(4, 2, 2, 4))
        nastrain.run_search(pairs, model, speed, _cfg(search_epochs=2), logger=logger)
        epoch_warnings = [call.args[0] for call in logger.warning.call_args_list if call.args[0].startswith("Epoch")]
        assert len(epoch_warnings) == 2
        assert "block predictions clamped widths to the speed model caps" in epoch_warnings[0]
        assert speed.clamped_calls >= 2 * 2 * len(pairs) // 4

    @staticmethod
    def test_no_clamp_warning_within_caps(pairs, mocker):
        logger = mocker.MagicMock()
        nastrain.run_search(pairs, _model(), _linear_speed(), _cfg(search_epochs=1), logger=logger)
        assert not [call for call in logger.warning.call_args_list if call.args[0].startswith("Epoch")]


class Test_finetune:
    @staticmethod
    def test_zero_epochs_is_identity(pairs):
        compact = srnet.extract_architecture(_model())
        before = [param.data.copy() for param in compact.parameters()]
        out = nastrain.finetune(compact, pairs, _cfg(finetune_epochs=0))
        assert out is compact
        for old, param in zip(before, out.parameters()):
            np.testing.assert_array_equal(old, param.data)

    @staticmethod
    def test_not_worse_than_start(pairs):
        compact = srnet.extract_architecture(_model())
        initial = nastrain.validation_psnr(compact, pairs)
        tuned = nastrain.finetune(compact, pairs, _cfg(finetune_epochs=3, lr=1e-3))
        assert nastrain.validation_psnr(tuned, pairs) >= initial - 0.05

    @staticmethod
    def test_deterministic(pairs):
        first = nastrain.finetune(srnet.extract_architecture(_model()), pairs, _cfg())
        second = nastrain.finetune(srnet.extract_architecture(_model()), pairs, _cfg())
        for a, b in zip(first.parameters(), second.parameters()):
            np.testing.assert_array_equal(a.data, b.data)

    @staticmethod
    def test_empty(pairs):
        with raises(SearchError):
            nastrain.finetune(srnet.extract_architecture(_model()), [], _cfg())


class Test_history:
    @staticmethod
    def test_round_trip(pairs, tmp_path: Path):
        _, history = nastrain.run_search(pairs, _model(), _linear_speed(), _cfg())
        nastrain.write_history(history, tmp_path / "history.csv")
        header = (tmp_path / "history.csv").read_text().splitlines()[0]
        assert header.startswith("epoch,l_sr,l_spd,l_total,v_n,active_blocks,b0_f2,b0_f3,b0_f4,b0_active")
        loaded = nastrain.read_history(tmp_path / "history.csv")
        assert len(loaded) == len(history)
        for row, orig in zip(loaded, history):
            assert row == approx(orig)
        assert isinstance(loaded[0]["b0_f2"], int)


@fixture(scope="module")
def analytic_speed() -> SpeedMLP:
    dataset = latlab.build_dataset("analytic", 2048, maxima=latlab.DEFAULT_MAXIMA, seed=0)
    return speedmodel.train_speed_model(dataset, batch_size=64, lr_halve_epochs=(200, 300)).model


@fixture(scope="module")
def corpus() -> dict[str, np.ndarray]:
    return dataeval.synthetic_corpus(14, (96, 96), seed=0)


def _full_model(seed: int) -> SupernetModel:
    # every channel starts live so pruning is measured against the full supernet
    return SupernetModel.build(scale=2, blocks=8, seed=seed, mask_init=(0.5, 1.0))


def _budget_cfg(v_t: float, seed: int, **kwargs) -> SearchConfig:
    defaults = dict(
        v_t=v_t,
        gamma=0.01,
        search_epochs=12,
        warmup_epochs=2,
        lr=1e-3,
        arch_lr=0.05,
        lr_halve_epochs=(8, 11),
        batch_size=8,
        patch=12,
        seed=seed,
    )
    return SearchConfig(**{**defaults, **kwargs})


def _kept_fraction(row: dict, blocks: int = 8) -> float:
    full = blocks * sum(latlab.DEFAULT_MAXIMA[1:3])
    return sum(row[f"b{n}_f2"] + row[f"b{n}_f3"] for n in range(blocks)) / full


@mark.slow
class Test_latency_budget:
    @staticmethod
    @mark.parametrize("seed", [1, 2, 3])
    def test_half_budget(seed: int, analytic_speed: SpeedMLP, corpus: dict[str, np.ndarray]):
        pairs = nastrain.make_patches(dict(list(corpus.items())[:10]), scale=2, patch=12, count=96, seed=seed)
        model = _full_model(seed)
        v_t = 0.5 * srnet.snapshot_architecture(model, analytic_speed).v_n
        _, history = nastrain.run_search(pairs, model, analytic_speed, _budget_cfg(v_t, seed))
        final = history[-1]
        assert final["v_n"] <= 1.05 * v_t
        assert final["active_blocks"] < 8 or _kept_fraction(final) <= 0.75

    @staticmethod
    @mark.parametrize("seed", [1, 2, 3])
    def test_tiny_budget_skips_blocks(seed: int, analytic_speed: SpeedMLP, corpus: dict[str, np.ndarray]):
        pairs = nastrain.make_patches(dict(list(corpus.items())[:10]), scale=2, patch=12, count=96, seed=seed)
        _, history = nastrain.run_search(pairs, _full_model(seed), analytic_speed, _budget_cfg(1e-3, seed))
        assert history[-1]["active_blocks"] <= 4

    @staticmethod
    @mark.parametrize("seed", [1, 2, 3])
    def test_loose_budget_keeps_blocks(seed: int, analytic_speed: SpeedMLP, corpus: dict[str, np.ndarray]):
        pairs = nastrain.make_patches(dict(list(corpus.items())[:10]), scale=2, patch=12, count=96, seed=seed)
        _, history = nastrain.run_search(pairs, _full_model(seed), analytic_speed, _budget_cfg(1e6, seed))
        assert history[-1]["active_blocks"] == 8
        assert history[-1]["l_spd"] == 0.0

    @staticmethod
    def test_beats_bicubic(analytic_speed: SpeedMLP, corpus: dict[str, np.ndarray]):
        names = list(corpus)
        train = {name: corpus[name] for name in names[:10]}
        held_out = {name: corpus[name] for name in names[10:]}
        pairs = nastrain.make_patches(train, scale=2, patch=16, count=160, seed=0)
        model = _full_model(0)
        v_t = 0.5 * srnet.snapshot_architecture(model, analytic_speed).v_n
        cfg = _budget_cfg(v_t, 0, finetune_epochs=30, lr=2e-3, finetune_lr_halve_epochs=(20, 25))
        searched, _ = nastrain.run_search(pairs, model, analytic_speed, cfg)
        compact = nastrain.finetune(srnet.extract_architecture(searched), pairs, cfg)

        def upscale(lr: np.ndarray) -> np.ndarray:
            with diffcore.no_grad():
                return dataeval.to_image(compact.forward(Tensor(dataeval.to_batch([lr]))).data[0])

        mean = dataeval.mean_row(dataeval.evaluate(held_out, upscale, scale=2))
        assert mean.psnr_db >= mean.bicubic_psnr_db + 0.3
