"""Exercise the Python bindings end to end. Exits nonzero on the first failure."""

import os
import sys
import tempfile

import tricond_py as t


def half_split(size=64):
    data = bytearray()
    for _y in range(size):
        for x in range(size):
            data += bytes([0, 0, 0] if x < size // 2 else [255, 255, 255])
    return t.Raster(size, size, bytes(data))


def check_raster_and_geometry():
    r = t.Raster.filled(4, 3, [10, 20, 30])
    assert (r.width, r.height) == (4, 3)
    assert r.pixel(3, 2) == (10, 20, 30)
    assert len(r.to_bytes()) == 36
    runs = t.rasterize_triangle([(0, 0), (8, 0), (0, 8)], 16, 16)
    assert sum(x1 - x0 + 1 for _, x0, x1 in runs) == 36
    assert t.rasterize_triangle([(0, 0), (4, 4), (8, 8)], 16, 16) == []


def check_approximate():
    target = half_split()
    a = t.approximate(target, shapes=50, seed=42)
    b = t.approximate(target, shapes=50, seed=42)
    assert a.canvas == b.canvas
    assert all(later < earlier for earlier, later in zip(a.trace, a.trace[1:]))
    assert a.score < 0.5 * 127.5, a.score
    assert a.svg().startswith("<svg")
    assert len(a.shapes) == len(a.trace)
    print(f"approximate final_rmse={a.score:.3f}")


def check_dataset(tmp):
    src = os.path.join(tmp, "in")
    os.mkdir(src)
    for i in range(3):
        half_split(80 + 8 * i).save(os.path.join(src, f"img{i}.png"))
        with open(os.path.join(src, f"img{i}.txt"), "w") as f:
            f.write(f"picture {i}\n")
    out = os.path.join(tmp, "ds")
    report = t.build_dataset(src, out, resize=64, shapes=5)
    assert report["processed"] == 3 and report["skipped"] == [], report
    check = t.validate_dataset(out)
    assert check["clean"] and check["entries"] == 3, check
    stats = t.dataset_stats(out)
    assert stats["count"] == 3 and stats["dimensions"] == [((64, 64), 3)], stats
    os.remove(os.path.join(out, "source", "img1.png"))
    check = t.validate_dataset(out)
    assert not check["clean"] and check["failures"][0][0] == 2, check
    print(f"dataset entries={stats['count']}")


def check_zeroconv(tmp):
    results = t.verify_zeroconv(0)
    for name, passed, detail in results:
        assert passed, (name, detail)
    net = t.ToyControlNet(7)
    x = [0.1 * (i % 7) for i in range(4 * 8 * 8)]
    c = [0.3 * (i % 5) for i in range(2 * 8 * 8)]
    assert net.forward(x, c) == net.locked_forward(x)
    fingerprint = net.locked_fingerprint()
    rows, (final_loss, fidelity) = net.train(steps=500, lr=0.05, seed=7)
    assert len(rows) == 500 and rows[0][2] == 0.0
    assert abs(rows[0][1] - net.baseline_loss()) < 1e-9
    assert final_loss < 0.1 * rows[0][1] and fidelity > 0.9, (final_loss, fidelity)
    assert net.locked_fingerprint() == fingerprint
    path = os.path.join(tmp, "block.txt")
    net.save_checkpoint(path)
    other = t.ToyControlNet(7)
    other.load_checkpoint(path)
    assert other.forward(x, c) == net.forward(x, c)
    light = t.Raster.filled(8, 8, [250, 250, 250])
    dark = t.Raster.filled(8, 8, [5, 5, 5])
    assert net.infer(light) != net.infer(dark)
    print(f"zeroconv loss_ratio={final_loss / rows[0][1]:.4f} fidelity={fidelity:.4f}")


def main():
    check_raster_and_geometry()
    check_approximate()
    with tempfile.TemporaryDirectory() as tmp:
        check_dataset(tmp)
        check_zeroconv(tmp)
    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
