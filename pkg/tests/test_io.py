import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flashstereo import io
from flashstereo.detect import Detection, Patch, extract_patch
from flashstereo.errors import DataError, ParseError
from flashstereo.match import Flash3D
from flashstereo.trajectory import build_streaks, link_trajectories

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(rows=st.lists(st.tuples(st.integers(1, 2), st.integers(0, 10**6), finite, finite,
                               st.floats(0, 360, exclude_max=True), st.floats(0, 180), st.integers(0, 10**4),
                               finite, st.floats(0, 1)), max_size=20))
def test_detections_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("d") / "d.csv"
    dets = [Detection(frame=f, w=w, h=h, theta=t, phi=p, area=a, peak=pk, camera=c, prob=pr)
            for c, f, w, h, t, p, a, pk, pr in rows]
    io.write_detections(path, dets, with_prob=True)
    back = io.read_detections(path)
    assert [(d.camera, d.frame, d.w, d.h, d.theta, d.phi, d.area, d.peak, d.prob) for d in back] == \
        [(d.camera, d.frame, d.w, d.h, d.theta, d.phi, d.area, d.peak, d.prob) for d in dets]


def test_detections_without_prob(tmp_path):
    path = tmp_path / "d.csv"
    io.write_detections(path, [Detection(frame=3, w=1.5, h=2.5, theta=10.0, phi=20.0)])
    assert path.read_text().splitlines()[0] == "camera,frame,w,h,theta_deg,phi_deg,area,peak"
    (d,) = io.read_detections(path)
    assert d.prob is None and d.frame == 3


@pytest.mark.parametrize("body, line", [
    ("1,0,1.0,2.0,3.0,4.0,9,100.0\n1,x,1.0,2.0,3.0,4.0,9,100.0\n", 3),
    ("1,0,1.0,2.0,3.0,4.0,9,100.0\n1,0,1.0,2.0,3.0\n", 3),
    ("1,-5,1.0,2.0,3.0,4.0,9,100.0\n", 2),
    ("1,0,1.0,2.0,nan,4.0,9,100.0\n", 2),
])
def test_detections_parse_error_names_line(tmp_path, body, line):
    path = tmp_path / "d.csv"
    path.write_text("camera,frame,w,h,theta_deg,phi_deg,area,peak\n" + body)
    with pytest.raises(ParseError, match=f"line {line}"):
        io.read_detections(path)


def test_detections_bad_header_and_missing(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(ParseError, match="line 1"):
        io.read_detections(path)
    with pytest.raises(DataError):
        io.read_detections(tmp_path / "none.csv")


def flashes(n, seed=0):
    rng = np.random.default_rng(seed)
    return [Flash3D(int(k), rng.normal(size=3) * 5, *rng.uniform(0, 10, 2), float(rng.uniform(0, 0.01)))
            for k in np.sort(rng.integers(0, 100, n))]


def test_flashes_and_ply_round_trip(tmp_path):
    fl = flashes(30)
    io.write_flashes(tmp_path / "f.csv", fl)
    io.write_ply(tmp_path / "f.ply", fl)
    back = io.read_flashes(tmp_path / "f.csv")
    for a, b in zip(fl, back):
        assert a.frame == b.frame and a.r1 == b.r1 and a.r2 == b.r2 and a.residual == b.residual
        assert a.position.tobytes() == b.position.tobytes()
    xyz, frames = io.read_ply(tmp_path / "f.ply")
    np.testing.assert_array_equal(xyz, np.array([f.position for f in fl]))
    np.testing.assert_array_equal(frames, [f.frame for f in fl])


def test_empty_flashes_and_ply(tmp_path):
    io.write_flashes(tmp_path / "f.csv", [])
    io.write_ply(tmp_path / "f.ply", [])
    assert io.read_flashes(tmp_path / "f.csv") == []
    xyz, frames = io.read_ply(tmp_path / "f.ply")
    assert xyz.shape == (0, 3) and frames.shape == (0,)


def test_flashes_parse_error(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("frame,x_m,y_m,z_m,r1,r2,residual\n0,1,2,3,4,5,6\n1,1,2\n")
    with pytest.raises(ParseError, match="line 3"):
        io.read_flashes(p)


def test_trajectories_csv(tmp_path):
    fl = [Flash3D(k, np.array([0.01 * k, 0, 0]), 1.0, 1.0, 0.0) for k in (0, 1, 2, 10, 11)]
    streaks = build_streaks(fl)
    trajs = link_trajectories(streaks)
    io.write_trajectories(tmp_path / "t.csv", trajs, streaks)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "trajectory_id,streak_id,frame,x_m,y_m,z_m"
    assert [l.split(",")[:3] for l in lines[1:]] == [["0", "0", "0"], ["0", "0", "1"], ["0", "0", "2"],
                                                     ["0", "1", "10"], ["0", "1", "11"]]


def test_json_sorted_and_parse_error(tmp_path):
    io.write_json(tmp_path / "a.json", {"b": 1, "a": [1.5]})
    assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
    (tmp_path / "bad.json").write_text('{\n\n "a": }')
    with pytest.raises(ParseError, match="line 3"):
        io.read_json(tmp_path / "bad.json")


@pytest.mark.parametrize("channels", [1, 3])
def test_raw_stream_round_trip(tmp_path, channels):
    rng = np.random.default_rng(channels)
    shape = (6, 10) if channels == 1 else (6, 10, 3)
    frames = [rng.integers(0, 256, shape).astype(np.uint8) for _ in range(4)]
    io.write_raw_stream(tmp_path / "s.raw", frames, fps=25.0)
    back = list(io.open_frames(tmp_path / "s.raw"))
    assert [k for k, _ in back] == [0, 1, 2, 3]
    for a, (_, b) in zip(frames, back):
        np.testing.assert_array_equal(a, b)
    store = io.FrameStore(tmp_path / "s.raw")
    assert len(store) == 4
    np.testing.assert_array_equal(store[2], frames[2])
    with pytest.raises(KeyError):
        store[4]
    assert io.read_json(tmp_path / "s.json")["fps"] == 25.0


def test_raw_stream_truncated(tmp_path):
    io.write_raw_stream(tmp_path / "s.raw", [np.zeros((4, 8), np.uint8)] * 2, fps=30.0)
    with open(tmp_path / "s.raw", "ab") as f:
        f.write(b"\x00" * 5)
    with pytest.raises(ParseError, match="truncated frame 2"):
        list(io.open_frames(tmp_path / "s.raw"))


def test_image_dir_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    frames = [rng.integers(0, 256, (8, 16, 3)).astype(np.uint8) for _ in range(3)]
    for k, f in enumerate(frames):
        io.write_image(tmp_path / "cam" / f"frame_{k:06d}.png", f)
    (tmp_path / "cam" / "notes.txt").write_text("ignored")
    back = list(io.open_frames(tmp_path / "cam"))
    assert len(back) == 3
    for a, (_, b) in zip(frames, back):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(io.FrameStore(tmp_path / "cam")[1], frames[1])


def test_bad_frame_sources(tmp_path):
    with pytest.raises(DataError):
        io.open_frames(tmp_path / "movie.mp4")
    with pytest.raises(DataError):
        io.list_frame_files(tmp_path / "missing")


def test_patch_dir_round_trip(tmp_path):
    f = np.random.default_rng(1).integers(0, 50, (100, 200, 3)).astype(np.uint8)
    f[40, 60] = 255
    p = extract_patch(f, (60, 40))
    p.frame, p.label = 12, "flash"
    path = io.write_patch(tmp_path, p, camera=2)
    assert path.name == "c2_f000012_w00060_h00040.png"
    (back,) = io.read_patch_dir(tmp_path)
    assert (back.frame, back.w, back.h, back.label) == (12, 60, 40, "flash")
    np.testing.assert_array_equal(back.pixels, p.pixels)
    assert isinstance(back, Patch) and back.is_centered()


def test_sha256(tmp_path):
    (tmp_path / "x").write_bytes(b"abc")
    assert io.sha256_file(tmp_path / "x") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
