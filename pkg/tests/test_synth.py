import io
import math

import numpy as np
import pytest
from scipy import stats

from canids.core import arbitration_winner, to_us
from canids.ingest import apply_metadata_labels, load_metadata, save_metadata
from canids.synth import (
    AmbientIdSpec,
    AmbientModel,
    AttackScenario,
    PayloadModel,
    apply_payload_spec,
    generate_ambient,
    inject_dos,
    inject_fabrication,
    inject_fuzzing_max_payload,
    inject_fuzzy,
    inject_targeted_spoof,
    load_scenario,
    run_scenario,
    save_scenario,
    sidecar_metadata,
    to_masquerade,
)


def simple_ambient(ids=None, duration=1.0, seed=7, jitter=0.0):
    ids = ids or [(0x100, 0.01), (0x200, 0.01)]
    specs = tuple(
        AmbientIdSpec(can_id=i, period=p, jitter_std=jitter,
                      payload=PayloadModel(kind="constant", base=bytes([k] * 8)))
        for k, (i, p) in enumerate(ids)
    )
    return AmbientModel(ids=specs, duration=duration, seed=seed)


def interarrivals(log, can_id):
    ts = np.array([f.timestamp_us for f in log.can_frames() if f.can_id == can_id], dtype=np.int64)
    return np.diff(ts) / 1e6


class TestGenerateAmbient:
    def test_deterministic_schedule_counts(self):
        log = generate_ambient(simple_ambient())
        counts = {}
        for f in log:
            counts[f.can_id] = counts.get(f.can_id, 0) + 1
        assert counts == {0x100: 100, 0x200: 100}

    def test_same_seed_same_log(self):
        a = generate_ambient(simple_ambient(seed=42))
        b = generate_ambient(simple_ambient(seed=42))
        assert a.frames == b.frames

    def test_different_seed_differs(self):
        a = generate_ambient(simple_ambient(seed=1))
        b = generate_ambient(simple_ambient(seed=2))
        assert a.frames != b.frames

    def test_time_sorted(self):
        log = generate_ambient(simple_ambient(jitter=0.001))
        ts = [f.timestamp_us for f in log]
        assert ts == sorted(ts)

    def test_mean_interarrival_near_period(self):
        period, jitter, duration = 0.01, 0.0005, 20.0
        model = simple_ambient(ids=[(0x300, period)], duration=duration, jitter=jitter)
        log = generate_ambient(model)
        gaps = interarrivals(log, 0x300)
        n = len(gaps)
        assert abs(gaps.mean() - period) <= 3 * jitter / math.sqrt(n) + 1e-6

    def test_payload_models(self):
        specs = (
            AmbientIdSpec(0x10, 0.01, payload=PayloadModel("constant", base=b"\xAA\xBB")),
            AmbientIdSpec(0x20, 0.01, payload=PayloadModel("counter", base=b"\x00\x00", positions=(1,))),
            AmbientIdSpec(0x30, 0.01, payload=PayloadModel("random_walk", base=b"\x80" * 4, step=2)),
        )
        log = generate_ambient(AmbientModel(ids=specs, duration=0.5, seed=3))
        const = [f.data for f in log.can_frames() if f.can_id == 0x10]
        assert set(const) == {b"\xAA\xBB"}
        counter = [f.data for f in log.can_frames() if f.can_id == 0x20]
        assert [d[1] for d in counter] == list(range(len(counter)))
        walk = [f.data for f in log.can_frames() if f.can_id == 0x30]
        deltas = np.abs(np.diff([list(d) for d in walk], axis=0))
        assert deltas.max() <= 2

    def test_json_roundtrip(self):
        model = simple_ambient(jitter=0.0002)
        again = AmbientModel.from_json_obj(model.to_json_obj())
        assert again == model


class TestInjectDos:
    def test_count_formula(self):
        ambient = generate_ambient(simple_ambient(duration=1.0))
        out = inject_dos(ambient, (0.2, 0.5), period=0.0003)
        injected = [f for f in out if f.label.is_attack]
        n = len(injected)
        assert n in (math.floor(0.3 / 0.0003), math.floor(0.3 / 0.0003) + 1)
        assert n == 1000  # exact with integer microsecond arithmetic

    def test_empty_interval(self):
        ambient = generate_ambient(simple_ambient())
        out = inject_dos(ambient, (0.5, 0.5))
        assert not any(f.label.is_attack for f in out)

    def test_frame_shape_and_labels(self):
        ambient = generate_ambient(simple_ambient())
        out = inject_dos(ambient, (0.0, 0.1))
        assert len(out) == len(ambient) + sum(1 for f in out if f.label.is_attack)
        for lf in out:
            if lf.label.is_attack:
                assert lf.frame.can_id == 0x000
                assert lf.frame.data == b"\x00" * 8
            else:
                assert lf.label.name == "Normal"
        ts = [f.timestamp_us for f in out]
        assert ts == sorted(ts)

    def test_wins_arbitration_against_ambient(self):
        ambient = generate_ambient(simple_ambient())
        out = inject_dos(ambient, (0.0, 0.05))
        injected = [f for f in out if f.label.is_attack]
        ambient_frames = [f.frame for f in out if not f.label.is_attack]
        for atk in injected[:20]:
            winner = arbitration_winner([atk.frame] + ambient_frames[:50])
            assert winner is atk.frame


class TestInjectFuzzy:
    def test_random_ids_and_payloads(self):
        ambient = generate_ambient(simple_ambient())
        out = inject_fuzzy(ambient, (0.1, 0.9), seed=5)
        injected = [f.frame for f in out if f.label.is_attack]
        assert len(injected) == 1600  # 0.8 s at 0.5 ms
        assert all(f.can_id < 2**11 for f in injected)
        assert all(f.dlc == 8 for f in injected)
        assert len({f.can_id for f in injected}) > 100
        assert len({f.data for f in injected}) > 1000

    def test_deterministic(self):
        ambient = generate_ambient(simple_ambient())
        a = inject_fuzzy(ambient, (0.1, 0.5), seed=9)
        b = inject_fuzzy(ambient, (0.1, 0.5), seed=9)
        assert a.frames == b.frames

    def test_extended_flag(self):
        ambient = generate_ambient(simple_ambient())
        out = inject_fuzzy(ambient, (0.1, 0.9), seed=5, extended_ids=True)
        injected = [f.frame for f in out if f.label.is_attack]
        assert any(f.can_id >= 2**11 for f in injected)


class TestInjectTargetedSpoof:
    def test_constant_frame(self):
        ambient = generate_ambient(simple_ambient())
        out = inject_targeted_spoof(ambient, 0x316, b"\xFF\x00" * 4, (0.2, 0.4), period=0.001)
        injected = [f.frame for f in out if f.label.is_attack]
        assert len(injected) == 200
        assert {f.can_id for f in injected} == {0x316}
        assert {f.data for f in injected} == {b"\xFF\x00" * 4}
        gaps = np.diff([f.timestamp_us for f in injected])
        assert set(gaps) == {1000}


class TestInjectFuzzingMaxPayload:
    def test_cycling_and_payload(self):
        ambient = generate_ambient(simple_ambient())
        cycle = list(range(0x000, 0x010))
        out = inject_fuzzing_max_payload(ambient, (0.1, 0.1 + 32 * 0.001), cycle, period=0.001)
        injected = [f.frame for f in out if f.label.is_attack]
        assert len(injected) == 32
        assert [f.can_id for f in injected] == cycle + cycle
        assert all(f.data == b"\xff" * 8 for f in injected)
        gaps = np.diff([f.timestamp_us for f in injected])
        assert set(gaps) == {1000}


class TestPayloadSpec:
    def test_copy_and_override(self):
        legit = bytes.fromhex("0011223344556677")
        spec = "XXXXXXXXXXXXFFXX"
        assert apply_payload_spec(spec, legit) == bytes.fromhex("001122334455FF77")

    def test_all_wildcards_is_copy(self):
        legit = bytes.fromhex("A1B2")
        assert apply_payload_spec("XXXX", legit) == legit

    def test_extends_when_fixed_beyond_dlc(self):
        assert apply_payload_spec("XXXXFF", b"\x01") == bytes.fromhex("0100FF")


def fabrication_setup(duration=60.0, target=0x0D0, interval=(10.0, 40.0), jitter=0.0004):
    specs = (
        AmbientIdSpec(target, 0.02, jitter_std=jitter,
                      payload=PayloadModel("constant", base=bytes.fromhex("0011223344556677"))),
        AmbientIdSpec(0x1A0, 0.01, jitter_std=jitter,
                      payload=PayloadModel("counter", base=b"\x00" * 8, positions=(7,))),
        AmbientIdSpec(0x2B0, 0.05, jitter_std=jitter,
                      payload=PayloadModel("random_walk", base=b"\x80" * 8, step=2)),
    )
    ambient = generate_ambient(AmbientModel(ids=specs, duration=duration, seed=11))
    fabricated = inject_fabrication(ambient, target, "XXXXXXXXXXXXFFXX", interval)
    return ambient, fabricated, target, interval


class TestFabrication:
    def test_one_injection_per_legit_frame(self):
        ambient, fabricated, target, interval = fabrication_setup()
        s, e = to_us(interval[0]), to_us(interval[1])
        legit_in = [
            f for f in ambient.can_frames() if f.can_id == target and s <= f.timestamp_us <= e
        ]
        injected = [f for f in fabricated if f.label.is_attack]
        assert len(injected) == len(legit_in)
        assert len(legit_in) >= 500

    def test_flam_pairs_differ_only_at_fixed_byte(self):
        ambient, fabricated, target, interval = fabrication_setup()
        frames = list(fabricated.frames)
        for i, lf in enumerate(frames):
            if not lf.label.is_attack:
                continue
            prev = frames[i - 1]
            assert prev.frame.can_id == target
            assert lf.timestamp_us == prev.timestamp_us + 1
            diff = [k for k in range(8) if lf.frame.data[k] != prev.frame.data[k]]
            assert diff == [6]
            assert lf.frame.data[6] == 0xFF

    def test_ambient_preserved(self):
        ambient, fabricated, _, _ = fabrication_setup()
        kept = [f.frame for f in fabricated if not f.label.is_attack]
        assert kept == ambient.can_frames()

    def test_timing_transparent_rate_doubles(self):
        ambient, fabricated, target, interval = fabrication_setup()
        s, e = to_us(interval[0]), to_us(interval[1])

        def rate(log):
            n = sum(
                1 for f in log.can_frames() if f.can_id == target and s <= f.timestamp_us <= e
            )
            return n / (interval[1] - interval[0])

        ratio = rate(fabricated) / rate(ambient)
        assert 1.9 <= ratio <= 2.1


class TestMasquerade:
    def test_count_conservation(self):
        ambient, fabricated, target, interval = fabrication_setup()
        masq = to_masquerade(fabricated, target, interval)
        s, e = to_us(interval[0]), to_us(interval[1])
        ambient_count = sum(
            1 for f in ambient.can_frames() if f.can_id == target and s <= f.timestamp_us <= e
        )
        masq_target = [
            lf for lf in masq if lf.frame.can_id == target and s <= lf.timestamp_us <= e + 1
        ]
        assert len(masq_target) == ambient_count
        assert all(lf.label.is_attack for lf in masq_target)

    def test_timing_opaque_rate_unchanged(self):
        ambient, fabricated, target, interval = fabrication_setup()
        masq = to_masquerade(fabricated, target, interval)
        s, e = to_us(interval[0]), to_us(interval[1])

        def count(log):
            return sum(
                1 for f in log.can_frames() if f.can_id == target and s <= f.timestamp_us <= e + 1
            )

        ratio = count(masq) / count(ambient)
        assert 0.95 <= ratio <= 1.05

    def test_interarrival_ks_close_to_ambient(self):
        ambient, fabricated, target, interval = fabrication_setup()
        masq = to_masquerade(fabricated, target, interval)
        ga = interarrivals(ambient, target)
        gm = interarrivals(masq, target)
        assert len(gm) >= 500
        ks = stats.ks_2samp(ga, gm).statistic
        assert ks <= 0.1

    def test_non_target_untouched(self):
        ambient, fabricated, target, interval = fabrication_setup()
        masq = to_masquerade(fabricated, target, interval)
        other_before = [f.frame for f in fabricated if f.frame.can_id != target]
        other_after = [f.frame for f in masq if f.frame.can_id != target]
        assert other_before == other_after


class TestScenarioRoundTrip:
    def test_json_roundtrip(self):
        sc = AttackScenario(
            kind="fabrication", interval=(1.0, 5.0), target_id=0x0D0,
            payload_spec="XXXXXXXXXXXXFFXX", seed=3, attack_class="Reverse Light On Fabrication Attack",
        )
        buf = io.StringIO()
        save_scenario(sc, buf)
        assert load_scenario(io.StringIO(buf.getvalue())) == sc

    def test_validation(self):
        with pytest.raises(ValueError):
            AttackScenario(kind="nope", interval=(0, 1))
        with pytest.raises(ValueError):
            AttackScenario(kind="fabrication", interval=(0, 1))  # no target
        with pytest.raises(ValueError):
            AttackScenario(kind="dos", interval=(2, 1))
        with pytest.raises(ValueError):
            AttackScenario(kind="fuzzing_max_payload", interval=(0, 1), id_cycle=(1,))  # no period

    def test_interval_outside_ambient_rejected(self):
        ambient = generate_ambient(simple_ambient(duration=1.0))
        sc = AttackScenario(kind="dos", interval=(5.0, 6.0))
        with pytest.raises(ValueError, match="outside the ambient span"):
            run_scenario(ambient, sc)


SCENARIOS = [
    AttackScenario(kind="dos", interval=(10.0, 20.0)),
    AttackScenario(kind="fuzzy", interval=(10.0, 20.0), seed=13),
    AttackScenario(kind="targeted_spoof", interval=(10.0, 20.0), target_id=0x316,
                   payload=bytes.fromhex("FF00FF00FF00FF00")),
    AttackScenario(kind="fuzzing_max_payload", interval=(10.0, 20.0),
                   id_cycle=(0x000, 0x001, 0x002), period=0.002),
    AttackScenario(kind="fabrication", interval=(10.0, 40.0), target_id=0x0D0,
                   payload_spec="XXXXXXXXXXXXFFXX"),
    AttackScenario(kind="masquerade", interval=(10.0, 40.0), target_id=0x0D0,
                   payload_spec="XXXXXXXXXXXXFFXX"),
]


@pytest.mark.parametrize("scenario", SCENARIOS, ids=lambda s: s.kind)
class TestSidecarEquivalence:
    def test_sidecar_relabel_matches_construction(self, scenario):
        ambient = generate_ambient(
            AmbientModel(
                ids=(
                    AmbientIdSpec(0x0D0, 0.02, jitter_std=0.0004,
                                  payload=PayloadModel("constant", base=bytes.fromhex("0011223344556677"))),
                    AmbientIdSpec(0x1A0, 0.01,
                                  payload=PayloadModel("counter", base=b"\x00" * 8, positions=(7,))),
                    AmbientIdSpec(0x2B0, 0.05, jitter_std=0.001,
                                  payload=PayloadModel("random_walk", base=b"\x80" * 8, step=2)),
                ),
                duration=60.0,
                seed=21,
            )
        )
        labeled = run_scenario(ambient, scenario)
        metadata = sidecar_metadata(scenario, labeled)

        buf = io.StringIO()
        save_metadata(metadata, buf)
        metadata = load_metadata(io.StringIO(buf.getvalue()))

        relabeled = apply_metadata_labels(
            labeled, metadata, label_space=labeled.label_space
        )
        construction = [lf.label.name for lf in labeled]
        replay = [lf.label.name for lf in relabeled]
        assert construction == replay

    def test_determinism(self, scenario):
        ambient = generate_ambient(simple_ambient(ids=[(0x0D0, 0.02), (0x1A0, 0.01)], duration=30.0))
        a = run_scenario(ambient, scenario)
        b = run_scenario(ambient, scenario)
        assert a.frames == b.frames
