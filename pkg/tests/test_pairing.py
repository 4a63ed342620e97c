import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from emogen.errors import (CatalogError, CountMismatch, DegenerateRange,
                           EmptyCatalog, OutOfRange)
from emogen.pairing import (MAX_SIMILARITY, PairManifest, TaggedItem, VaPoint,
                            load_catalog, load_manifest, load_va_dictionary,
                            manifest_bytes, normalize_va, pair_datasets,
                            save_manifest, similarity, split)

va_values = st.floats(min_value=1.0, max_value=9.0, allow_nan=False)


def _item(item_id, v, a, kind="image"):
    return TaggedItem(id=item_id, kind=kind, va=VaPoint(v, a),
                      payload_path=f"/tmp/{item_id}")


class TestNormalize:
    def test_endpoints_and_midpoint(self):
        assert normalize_va(0.0, 0.0, 1.0) == 1.0
        assert normalize_va(1.0, 0.0, 1.0) == 9.0
        assert normalize_va(0.5, 0.0, 1.0) == 5.0

    def test_symmetric_source_range(self):
        assert normalize_va(0.5, -1.0, 1.0) == 7.0

    def test_degenerate_range(self):
        with pytest.raises(DegenerateRange):
            normalize_va(0.0, 2.0, 2.0)

    def test_out_of_range_value(self):
        with pytest.raises(OutOfRange):
            normalize_va(1.5, 0.0, 1.0)

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_output_always_in_target_range(self, a, b):
        lo, hi = min(a, b), max(a, b)
        if hi - lo < 1e-6:
            return
        mid = (lo + hi) / 2
        assert 1.0 <= normalize_va(mid, lo, hi) <= 9.0


class TestSimilarity:
    def test_hand_example(self):
        assert similarity(VaPoint(5, 5), VaPoint(4, 4)) == pytest.approx(1 / math.sqrt(2))

    def test_identical_points_sentinel(self):
        assert similarity(VaPoint(3, 3), VaPoint(3, 3)) == MAX_SIMILARITY == math.inf

    @given(va_values, va_values, va_values, va_values)
    def test_symmetric(self, v1, a1, v2, a2):
        x, y = VaPoint(v1, a1), VaPoint(v2, a2)
        assert similarity(x, y) == similarity(y, x)

    def test_monotone_in_distance(self):
        anchor = VaPoint(5, 5)
        sims = [similarity(anchor, VaPoint(5 + d, 5)) for d in (0.5, 1, 2, 3.5)]
        assert sims == sorted(sims, reverse=True)


class TestPairing:
    def test_picks_nearest_image_with_reuse(self):
        midis = [_item("m1", 2, 2, "midi"), _item("m2", 2.2, 2.2, "midi"),
                 _item("m3", 8, 8, "midi")]
        images = [_item("i_far", 8.5, 8.5), _item("i_near", 2, 2.1)]
        manifest = pair_datasets(midis, images)
        assert [(p["midi_id"], p["image_id"]) for p in manifest.pairs] == \
            [("m1", "i_near"), ("m2", "i_near"), ("m3", "i_far")]

    def test_tie_breaks_on_lower_image_id(self):
        midis = [_item("m", 5, 5, "midi")]
        images = [_item("i_b", 5, 6), _item("i_a", 5, 4)]
        manifest = pair_datasets(midis, images)
        assert manifest.pairs[0]["image_id"] == "i_a"

    def test_coincident_points_get_sentinel(self):
        manifest = pair_datasets([_item("m", 4, 4, "midi")], [_item("i", 4, 4)])
        assert manifest.pairs[0]["similarity"] == MAX_SIMILARITY

    def test_empty_catalog_raises(self):
        with pytest.raises(EmptyCatalog):
            pair_datasets([], [_item("i", 5, 5)])

    def test_matches_exhaustive_oracle(self):
        py_rng = random.Random(99)
        for _ in range(20):
            midis = [_item(f"m{i:02d}", py_rng.uniform(1, 9), py_rng.uniform(1, 9), "midi")
                     for i in range(py_rng.randint(1, 12))]
            images = [_item(f"i{i:02d}", py_rng.uniform(1, 9), py_rng.uniform(1, 9))
                      for i in range(py_rng.randint(1, 12))]
            manifest = pair_datasets(midis, images)
            for midi, pair in zip(sorted(midis, key=lambda m: m.id), manifest.pairs):
                best = None
                for img in sorted(images, key=lambda im: im.id):
                    d2 = ((midi.va.valence - img.va.valence) ** 2
                          + (midi.va.arousal - img.va.arousal) ** 2)
                    if best is None or d2 < best[0]:
                        best = (d2, img.id)
                assert pair["image_id"] == best[1]


class TestSplit:
    def _manifest(self, n):
        pairs = [{"midi_id": f"m{i:04d}", "image_id": f"i{i:04d}", "similarity": 1.0}
                 for i in range(n)]
        return PairManifest(pairs=pairs)

    def test_counts_respected(self):
        tagged = split(self._manifest(3000), (2884, 100, 16), seed=4)
        assert tagged.split_counts() == {"train": 2884, "test": 100, "val": 16}

    def test_count_mismatch(self):
        with pytest.raises(CountMismatch):
            split(self._manifest(10), (5, 4, 2), seed=0)

    def test_deterministic_under_seed(self):
        a = split(self._manifest(50), (40, 6, 4), seed=7)
        b = split(self._manifest(50), (40, 6, 4), seed=7)
        assert manifest_bytes(a) == manifest_bytes(b)

    def test_seed_changes_assignment(self):
        a = split(self._manifest(50), (40, 6, 4), seed=7)
        b = split(self._manifest(50), (40, 6, 4), seed=8)
        assert manifest_bytes(a) != manifest_bytes(b)

    def test_order_preserved(self):
        tagged = split(self._manifest(20), (10, 5, 5), seed=1)
        assert [p["midi_id"] for p in tagged.pairs] == [f"m{i:04d}" for i in range(20)]


class TestFiles:
    def test_manifest_round_trip_with_inf(self, tmp_path):
        manifest = PairManifest(
            pairs=[{"midi_id": "m", "image_id": "i",
                    "similarity": MAX_SIMILARITY, "split": "train"}],
            seed=3, config_hash="abc")
        path = tmp_path / "pairs.json"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert loaded.pairs == manifest.pairs
        assert loaded.seed == 3 and loaded.config_hash == "abc"

    def test_load_manifest_rejects_other_json(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "something-else", "pairs": []}')
        with pytest.raises(CatalogError):
            load_manifest(path)

    def test_va_dictionary(self, tmp_path):
        path = tmp_path / "dict.csv"
        path.write_text("label,valence,arousal\nhappy,7.5,6.0\nsad,2.0,3.0\n")
        mapping = load_va_dictionary(path)
        assert mapping == {"happy": VaPoint(7.5, 6.0), "sad": VaPoint(2.0, 3.0)}

    def test_va_dictionary_bad_header(self, tmp_path):
        path = tmp_path / "dict.csv"
        path.write_text("name,v,a\nhappy,7,6\n")
        with pytest.raises(CatalogError):
            load_va_dictionary(path)

    def test_catalog_numeric(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("id,path,valence,arousal\na,x.mid,5.0,5.0\nb,y.mid,2.0,8.0\n")
        items = load_catalog(path, "midi")
        assert [it.id for it in items] == ["a", "b"]
        assert items[1].va == VaPoint(2.0, 8.0)

    def test_catalog_labeled(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("id,path,emotion_label\na,x.png,happy\n")
        items = load_catalog(path, "image", {"happy": VaPoint(7.0, 6.0)})
        assert items[0].va == VaPoint(7.0, 6.0)

    def test_catalog_labeled_without_dictionary(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("id,path,emotion_label\na,x.png,happy\n")
        with pytest.raises(CatalogError):
            load_catalog(path, "image")

    def test_catalog_unknown_label(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("id,path,emotion_label\na,x.png,zesty\n")
        with pytest.raises(CatalogError, match="zesty"):
            load_catalog(path, "image", {"happy": VaPoint(7.0, 6.0)})

    def test_catalog_duplicate_id(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("id,path,valence,arousal\na,x.mid,5,5\na,y.mid,2,8\n")
        with pytest.raises(CatalogError, match="duplicate"):
            load_catalog(path, "midi")

    def test_catalog_out_of_range_reports_row(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("id,path,valence,arousal\na,x.mid,5,5\nb,y.mid,12,5\n")
        with pytest.raises(CatalogError, match=":3"):
            load_catalog(path, "midi")
