import datetime as dt

import numpy as np
import pytest
from PIL import Image

from congestion_lab.frame_extraction import extract_frame, intersection_intensity
from congestion_lab.road_network import incoming_segments, load_network, read_registry, validate
from congestion_lab.series_store import assemble_matrix, is_weekend
from congestion_lab.synth_oracle import (ProfileSpec, SyntheticScene, frame_instants, make_scene,
                                         render_frame, render_frames, simulate_process, simulate_series)


def test_scene_is_consistent(tmp_path):
    scene = make_scene(5, seed=3, chords=True)
    assert validate(scene.net) == []
    mask = scene.mask()
    paths = scene.write_inputs(tmp_path)
    net = load_network(read_registry(paths["registry"]), paths["mask"])
    assert net == scene.net
    assert SyntheticScene.load(paths["scene"]).to_dict() == scene.to_dict()
    for seg in scene.net.segments:
        assert np.all(mask.reshape(-1, 3)[(scene.label_image().ravel() ==
                                           [s.id for s in scene.net.segments].index(seg.id))]
                      == seg.annotation_color)


def test_frame_instants():
    ts = frame_instants(1)
    assert len(ts) == 2160 and str(ts[0]) == "2019-11-01T06:00:00" and str(ts[-1]) == "2019-11-01T23:59:30"
    assert len(frame_instants(2, 300)) == 432


def test_flat_level2_profile_has_zero_intensity():
    prof = ProfileSpec(base=2.0, peaks=(), noise_sd=0.0, offset_sd=0.0)
    sim = simulate_process(make_scene(4, profile=prof), 1)
    assert np.all(sim.levels == 2) and np.all(sim.matrix.values == 0)


def test_pinned_level4_segment():
    base = make_scene(4)
    prof = ProfileSpec(base=1.0, peaks=(), noise_sd=0.0, offset_sd=0.0, pinned_levels={"S002": 4})
    scene = make_scene(4, profile=prof)
    seg = scene.net.segment("S002")
    sim = simulate_process(scene, 1)
    assert np.all(sim.matrix.column(seg.to_id) == seg.pixel_count)
    assert base.net == scene.net


def test_same_seed_same_realization():
    scene = make_scene(4, seed=9)
    a, b = simulate_process(scene, 2), simulate_process(scene, 2)
    assert np.array_equal(a.levels, b.levels) and a.matrix == b.matrix
    assert not np.array_equal(a.levels, simulate_process(scene, 2, seed=10).levels)
    assert a.levels.min() >= 1 and a.levels.max() <= 4


def test_render_single_segment_level3():
    scene = make_scene(2)
    levels = np.array([3, 1])
    img = render_frame(scene, levels)
    one = render_frame(scene, np.array([3, 3]))
    colors = {tuple(c) for c in one.reshape(-1, 3)}
    assert colors == {(255, 255, 255), scene.palette.level_colors[3]}
    assert {tuple(c) for c in img.reshape(-1, 3)} == {(255, 255, 255), scene.palette.level_colors[3],
                                                      scene.palette.level_colors[1]}


def test_render_extract_round_trip(tmp_path):
    scene = make_scene(4, seed=5)
    sim = simulate_process(scene, 1, base_interval_s=1800)
    paths = render_frames(scene, sim, tmp_path, workers=2)
    assert len(paths) == len(sim.timestamps)
    mask = scene.mask()
    frames = []
    for i, p in enumerate(paths):
        obs = extract_frame(p, scene.net, mask, scene.palette)
        frames.append(obs)
        for k, seg in enumerate(scene.net.segments):
            hist = [0] * 5
            hist[sim.levels[i, k]] = seg.pixel_count
            assert obs.histograms[seg.id] == tuple(hist)
    assert assemble_matrix(frames, scene.net) == sim.matrix


def test_weekend_noise_ordering():
    prof = ProfileSpec(weekday_noise=3.0, weekend_noise=1.0)
    sim = simulate_process(make_scene(4, profile=prof), 14)
    days = sim.matrix.timestamps.astype("datetime64[D]")
    wk = np.array([is_weekend(d.item()) for d in days])
    tod = (sim.matrix.timestamps - days).astype(int)
    resid = sim.matrix.values.copy()
    for flag in (True, False):
        sel = wk == flag
        for t in np.unique(tod[sel]):
            rows = sel & (tod == t)
            resid[rows] -= resid[rows].mean(axis=0)
    assert resid[~wk].var() > resid[wk].var()


def test_simulate_series():
    prof = np.linspace(0, 10, 50)
    np.testing.assert_array_equal(simulate_series(prof, 0.0, 0.0, 3, seed=1), np.tile(prof, 3))
    s = simulate_series(np.zeros(10000), 0.8, 1.0, 1, seed=4)
    x = s - s.mean()
    acf1 = float(x[1:] @ x[:-1] / (x @ x))
    assert abs(acf1 - 0.8) <= 0.03
    np.testing.assert_array_equal(simulate_series(prof, 0.5, 2.0, 2, seed=3),
                                  simulate_series(prof, 0.5, 2.0, 2, seed=3))
    with pytest.raises(ValueError):
        simulate_series(prof, 1.0, 1.0)
