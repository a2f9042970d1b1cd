import pytest
import torch
import torch.nn.functional as F

from mvseg.multiview import (
    make_multiview,
    merge_locals,
    pack_views,
    resize,
    scatter_pack,
    scatter_unified,
    split_merge,
    split_views,
)


def test_make_multiview_full_resolution():
    img = torch.rand(1, 3, 1024, 1024)
    assert make_multiview(img, (512, 512)).shape == (5, 3, 512, 512)


def test_make_multiview_exact_quadrants_when_already_working_size():
    img = torch.rand(2, 3, 32, 48)
    views = make_multiview(img, (16, 24))
    locals_, glob = split_views(views)
    assert torch.equal(locals_[0], img[..., :16, :24])
    assert torch.equal(locals_[1], img[..., :16, 24:])
    assert torch.equal(locals_[2], img[..., 16:, :24])
    assert torch.equal(locals_[3], img[..., 16:, 24:])
    assert torch.equal(glob, F.interpolate(img, size=(16, 24), mode="bilinear", align_corners=False))


def test_make_multiview_constant_field():
    views = make_multiview(torch.full((1, 3, 37, 53), 0.25), (8, 8))
    assert torch.all(views == 0.25)


def test_make_multiview_merged_locals_match_resized_raw():
    img = torch.rand(2, 3, 50, 70)
    views = make_multiview(img, (16, 32))
    unified, _ = split_merge(views)
    assert torch.equal(unified, resize(img, (32, 64)))


@pytest.mark.parametrize("size", [(0, 8), (8, -1), (4, 8)])
def test_make_multiview_rejects_bad_view_size(size):
    with pytest.raises(ValueError):
        make_multiview(torch.rand(1, 3, 16, 16), size)


def test_make_multiview_rejects_degenerate_image():
    with pytest.raises(ValueError):
        make_multiview(torch.rand(1, 3, 1, 16), (8, 8))
    with pytest.raises(ValueError):
        make_multiview(torch.rand(3, 16, 16), (8, 8))


def test_split_views_global_block():
    x = torch.zeros(10, 2, 3, 3)
    x[8:] = 7.0
    locals_, glob = split_views(x)
    assert torch.all(glob == 7.0)
    assert all(t.shape == (2, 2, 3, 3) for t in locals_)
    assert glob.shape == (2, 2, 3, 3)


def test_split_views_rejects_indivisible_batch():
    with pytest.raises(ValueError):
        split_views(torch.zeros(7, 1, 2, 2))


def test_pack_split_round_trip():
    x = torch.randn(15, 4, 5, 6)
    assert torch.equal(pack_views(*split_views(x)), x)


def test_pack_views_markers_and_exhaustive_layout():
    B, C, a, b = 1, 1, 2, 2
    views = [torch.full((B, C, a, b), float(m)) for m in range(5)]
    packed = pack_views(views[:4], views[4])
    flat = packed.reshape(-1)
    assert flat.numel() == 20
    # element (view m, sample 0, channel 0, i, j) sits at offset m*B*C*a*b + i*b + j
    for m in range(5):
        for i in range(a):
            for j in range(b):
                assert flat[m * B * C * a * b + i * b + j] == m


def test_pack_views_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        pack_views([torch.zeros(1, 1, 2, 2)] * 3 + [torch.zeros(1, 1, 2, 3)], torch.zeros(1, 1, 2, 2))
    with pytest.raises(ValueError):
        pack_views([torch.zeros(1, 1, 2, 2)] * 3, torch.zeros(1, 1, 2, 2))


def test_merge_constant_quadrants():
    quads = [torch.full((1, 2, 3, 3), float(v)) for v in (1, 2, 3, 4)]
    u = merge_locals(quads)
    expected = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).repeat_interleave(3, 0).repeat_interleave(3, 1)
    assert torch.equal(u[0, 0], expected)
    assert torch.equal(u[0, 1], expected)
    assert [float(q.unique()) for q in scatter_unified(u)] == [1, 2, 3, 4]


def test_merge_smallest_case():
    quads = [torch.tensor(v).reshape(1, 1, 1, 1) for v in (0.1, 0.2, 0.3, 0.4)]
    assert torch.equal(merge_locals(quads), torch.tensor([[[[0.1, 0.2], [0.3, 0.4]]]]))


def test_merge_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        merge_locals([torch.zeros(1, 1, 2, 2)] * 3 + [torch.zeros(1, 1, 2, 1)])


def test_scatter_rejects_odd_dims():
    with pytest.raises(ValueError):
        scatter_unified(torch.zeros(1, 1, 3, 4))


def test_scatter_concatenation_reproduces_input():
    u = torch.randn(1, 1, 4, 4)
    tl, tr, bl, br = scatter_unified(u)
    assert torch.equal(torch.cat([torch.cat([tl, tr], -1), torch.cat([bl, br], -1)], -2), u)


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64, torch.int64])
def test_round_trips_all_dtypes(dtype):
    u = (torch.randn(2, 3, 6, 8) * 100).to(dtype)
    assert torch.equal(merge_locals(scatter_unified(u)), u)
    quads = list(scatter_unified(u))
    assert all(torch.equal(a, b) for a, b in zip(scatter_unified(merge_locals(quads)), quads))
    x = (torch.randn(10, 3, 4, 4) * 100).to(dtype)
    assert torch.equal(scatter_pack(*split_merge(x)), x)


def test_resize_noop_for_matching_size():
    x = torch.randn(1, 1, 5, 5)
    assert resize(x, (5, 5)) is x
