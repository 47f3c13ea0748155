"""Quick end-to-end check of the pyucnet bindings."""

import math
import os
import tempfile

import pyucnet


def main():
    ks = pyucnet.kernels()
    assert len(ks) == 62 and all(len(k) == 5 and len(k[0]) == 5 for k in ks)

    cover = pyucnet.ColorImage.textured(32, 32, seed=3)
    assert (cover.width, cover.height, cover.domain) == (32, 32, "spatial")
    stego = cover.lsbm(0.2, seed=5)
    diffs = [abs(a - b) for c in range(3) for a, b in zip(cover.plane(c), stego.plane(c))]
    assert max(diffs) <= 1.0 and any(diffs)

    planes, h, w, values = pyucnet.residuals(cover)
    assert (planes, h, w) == (186, 32, 32) and len(values) == 186 * 32 * 32
    assert max(abs(v) for v in values) <= 3.0

    assert abs(pyucnet.inverse_ternary_entropy(math.log2(3)) - 1 / 3) < 1e-9
    alpha = pyucnet.ternary_entropy(0.2)
    assert abs(pyucnet.inverse_ternary_entropy(alpha) - 0.2) < 1e-9
    assert pyucnet.p_e([0.1, 0.2, 0.8, 0.9], [False, False, True, True]) == 0.0

    model = pyucnet.Model("desk", "spatial", seed=1)
    assert model.param_count == 315138
    scores = model.scores([cover, stego])
    assert len(scores) == 2 and all(0.0 <= s <= 1.0 for s in scores)

    with tempfile.TemporaryDirectory() as tmp:
        rows = []
        for i in range(4):
            c = pyucnet.ColorImage.textured(24, 24, seed=10 + i)
            cp, sp = os.path.join(tmp, f"c{i}.ppm"), os.path.join(tmp, f"s{i}.ppm")
            c.save_ppm(cp)
            c.lsbm(0.2, seed=i).save_ppm(sp)
            rows.append(f"{cp}\t{sp}\tspatial\t{alpha!r}\t{i}")
        manifest = os.path.join(tmp, "pairs.tsv")
        with open(manifest, "w") as f:
            f.write("\n".join(rows) + "\n")
        out = os.path.join(tmp, "m.ucnt")
        history = pyucnet.train_manifest(manifest, out, epochs=2, batch_pairs=2, arch="tiny", seed=4)
        assert [r["epoch"] for r in history] == [1, 2]
        loaded = pyucnet.Model.load(out)
        assert loaded.config()["domain"] == "spatial"
        report = pyucnet.evaluate(manifest, loaded)
        assert report["tp"] + report["fp"] + report["tn"] + report["fn"] == 8

    print("pyucnet smoke test passed")


if __name__ == "__main__":
    main()
