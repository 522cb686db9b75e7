import numpy as np
import pytest

from rapgs.errors import ValidationError
from rapgs.neighbors import avg_knn_distance, build_knn
from rapgs.render import render
from rapgs.scene import activate, select
from rapgs.synth import GHOST_MAX_OPACITY, LABELS, SynthSpec, generate, read_labels, split_views, write_dataset

SPEC = SynthSpec(informative=100, clones=40, floaters=12, ghosts=20, blobs=20, cameras=4, image_size=32)


@pytest.fixture(scope="module")
def synth():
    return generate(SPEC)


def test_informative_only():
    s = generate(SynthSpec(informative=50, clones=0, floaters=0, ghosts=0, blobs=0, cameras=2, image_size=16))
    assert set(s.labels) == {"informative"} and len(s.scene) == 50


def test_counts_and_labels(synth):
    for label, n in zip(LABELS, (100, 40, 12, 20, 20)):
        assert (synth.labels == label).sum() == n
    assert len(synth.labels) == len(synth.scene)


def test_ghost_opacity(synth):
    o = activate(synth.scene).opacities[synth.labels == "ghost"]
    assert (o < GHOST_MAX_OPACITY).all()


@pytest.mark.parametrize("seed", range(3))
def test_floater_distance(seed):
    s = generate(SynthSpec(seed=seed, cameras=1, image_size=16))
    d = avg_knn_distance(build_knn(s.scene.positions, 8))
    median = np.median(d[s.labels == "informative"])
    assert (d[s.labels == "floater"] >= 5 * median).all()


def test_blobs_view_independent(synth):
    blobs = synth.labels == "blob"
    assert (synth.scene.sh_rest[blobs] == 0).all()
    assert (synth.scene.sh_rest[synth.labels == "informative"] != 0).any()


def test_deterministic():
    a, b = generate(SPEC), generate(SPEC)
    assert a.scene.positions.tobytes() == b.scene.positions.tobytes()
    assert all(x.gt_image.tobytes() == y.gt_image.tobytes() for x, y in zip(a.views, b.views))
    c = generate(SynthSpec(**{**SPEC.__dict__, "seed": 1}))
    assert a.scene.positions.tobytes() != c.scene.positions.tobytes()


def test_gt_is_informative_render(synth):
    informative = select(synth.scene, synth.labels == "informative")
    for v in synth.views:
        assert render(v, informative).image.tobytes() == v.gt_image.tobytes()


def test_planted_primitives_change_the_render(synth):
    # the full scene differs from the ground truth, so the redundant classes matter
    v = synth.views[0]
    assert not np.array_equal(render(v, synth.scene).image, v.gt_image)


def test_split():
    train, test = split_views(list(range(12)))
    assert test == [2, 5, 8, 11] and len(train) == 8


def test_invalid_spec():
    with pytest.raises(ValidationError):
        generate(SynthSpec(informative=0, clones=0, floaters=0, ghosts=0, blobs=0))
    with pytest.raises(ValidationError):
        generate(SynthSpec(cameras=0))
    with pytest.raises(ValidationError):
        generate(SynthSpec(ghosts=-1))


def test_write_dataset(tmp_path, synth):
    paths = write_dataset(synth, tmp_path)
    np.testing.assert_array_equal(read_labels(paths["labels"]), synth.labels)
    assert len(list((tmp_path / "images").glob("*.png"))) == 4
