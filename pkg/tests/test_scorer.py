import math
import random

import httpx
import numpy as np
import pytest
from PIL import Image

from atlas.geo import BBox, FootprintIndex, GeoPoint, ring_from_coords
from atlas.scorer import (
    DIHEDRAL_ELEMENTS,
    BuiltFractionScorer,
    Candidate,
    ConstantScorer,
    FixtureScorer,
    RemoteScorerProtocolError,
    RemoteScorerTransportError,
    ScoreResult,
    ScorerError,
    TileImage,
    decode_tile_png,
    dihedral_inverse,
    dihedral_transform,
    encode_tile_png,
    generate_candidates,
    rank_review_queue,
    remote_score,
    tta_score,
)
from atlas.tiles import TileIndex, tile_bounds


def blank_tile(tile=TileIndex(15, 16384, 16384), size=16, value=0):
    return TileImage(width=size, height=size, pixels=bytes([value]) * (size * size * 3),
                     bounds=tile_bounds(tile), tile=tile)


def image_from_array(arr, tile=TileIndex(15, 16384, 16384)):
    return TileImage.from_array(arr, bounds=tile_bounds(tile), tile=tile)


class TestTileImage:
    def test_square_required(self):
        with pytest.raises(ValueError, match="square"):
            TileImage(width=4, height=8, pixels=bytes(4 * 8 * 3),
                      bounds=BBox(0, 0, 1, 1), tile=TileIndex(1, 0, 0))

    def test_buffer_length_checked(self):
        with pytest.raises(ValueError, match="buffer"):
            TileImage(width=4, height=4, pixels=bytes(10),
                      bounds=BBox(0, 0, 1, 1), tile=TileIndex(1, 0, 0))

    def test_png_round_trip(self):
        rng = random.Random(3)
        arr = np.array([[[rng.randrange(256) for _ in range(3)] for _ in range(8)]
                        for _ in range(8)], dtype=np.uint8)
        img = image_from_array(arr)
        back = decode_tile_png(encode_tile_png(img), img.bounds, img.tile)
        assert back.pixels == img.pixels


class TestScoreResult:
    def test_probability_validated(self):
        with pytest.raises(ValueError):
            ScoreResult(probability=1.5, model_version="x")

    def test_saliency_range_validated(self):
        with pytest.raises(ValueError):
            ScoreResult(probability=0.5, model_version="x",
                        saliency=np.array([[2.0]]))


class TestBuiltinScorers:
    def test_constant_scorer(self):
        s = ConstantScorer(0.7)
        assert s.score(blank_tile()).probability == 0.7
        assert s.score(blank_tile(size=32, value=200)).probability == 0.7

    def test_fixture_scorer_by_tile(self):
        tile = TileIndex(15, 100, 200)
        s = FixtureScorer({"15/100/200": 0.83})
        assert s.score(blank_tile(tile=tile)).probability == 0.83

    def test_fixture_default_and_missing(self):
        tile = TileIndex(15, 1, 1)
        assert FixtureScorer({}, default=0.1).score(blank_tile(tile=tile)).probability == 0.1
        with pytest.raises(ScorerError, match="fixture"):
            FixtureScorer({}).score(blank_tile(tile=tile))

    def test_fixture_saliency_payload(self):
        tile = TileIndex(15, 2, 3)
        s = FixtureScorer({"15/2/3": {"probability": 0.6, "saliency": [[0.0, 1.0]]}})
        res = s.score(blank_tile(tile=tile))
        assert res.probability == 0.6
        assert res.saliency.shape == (1, 2)


def square_ring(lat, lon, half_deg):
    return ring_from_coords([(lat - half_deg, lon - half_deg),
                             (lat - half_deg, lon + half_deg),
                             (lat + half_deg, lon + half_deg),
                             (lat + half_deg, lon - half_deg)])


class TestBuiltFractionScorer:
    tile = TileIndex(15, 16384, 16300)  # north of the equator

    def test_no_footprints_zero(self):
        s = BuiltFractionScorer(FootprintIndex.build([]))
        assert s.score(blank_tile(tile=self.tile)).probability == 0.0

    def test_fully_covered_one(self):
        b = tile_bounds(self.tile)
        center_lat = (b.min_lat + b.max_lat) / 2
        center_lon = (b.min_lon + b.max_lon) / 2
        big = square_ring(center_lat, center_lon, 4 * (b.max_lon - b.min_lon))
        s = BuiltFractionScorer(FootprintIndex.build([("big", big)]))
        assert s.score(blank_tile(tile=self.tile)).probability == 1.0

    def test_half_covered_subcell_oracle(self):
        # Footprint spans the west half of the tile (plus margin north/south).
        b = tile_bounds(self.tile)
        mid_lon = (b.min_lon + b.max_lon) / 2
        ring = ring_from_coords([
            (b.min_lat - 0.01, b.min_lon - 0.01),
            (b.min_lat - 0.01, mid_lon),
            (b.max_lat + 0.01, mid_lon),
            (b.max_lat + 0.01, b.min_lon - 0.01),
        ])
        fpi = FootprintIndex.build([("west", ring)])
        s = BuiltFractionScorer(fpi, subgrid=16)
        res = s.score(blank_tile(tile=self.tile))
        assert res.probability == pytest.approx(0.5, abs=1 / 16)
        # Oracle: count subcell centers inside by brute force.
        from atlas.geo import point_in_polygon
        n_inside = 0
        for r in range(16):
            lat = b.max_lat - (r + 0.5) * (b.max_lat - b.min_lat) / 16
            for c in range(16):
                lon = b.min_lon + (c + 0.5) * (b.max_lon - b.min_lon) / 16
                n_inside += point_in_polygon(GeoPoint(lat, lon), ring)
        assert res.probability == n_inside / 256


class PixelSumScorer:
    """Probability derived from a corner-weighted pixel sum: orientation-sensitive."""

    model_version = "pixelsum"

    def __init__(self):
        self.calls = 0

    def score(self, img: TileImage) -> ScoreResult:
        self.calls += 1
        arr = img.to_array().astype(np.float64)
        h, w = arr.shape[:2]
        weights = np.linspace(0, 1, h)[:, None] * np.linspace(0, 1, w)[None, :]
        value = float((arr[:, :, 0] * weights).sum() / (255.0 * weights.sum()))
        return ScoreResult(probability=value, model_version=self.model_version,
                           saliency=arr[:, :, 0] / 255.0)


PIL_DIHEDRAL = (None, Image.ROTATE_90, Image.ROTATE_180, Image.ROTATE_270,
                Image.FLIP_LEFT_RIGHT, Image.FLIP_TOP_BOTTOM,
                Image.TRANSPOSE, Image.TRANSVERSE)


class TestTtaScore:
    def test_constant_scorer_unchanged(self):
        res = tta_score(ConstantScorer(0.42), blank_tile())
        assert res.probability == 0.42
        assert res.model_version.endswith("+tta8")

    def test_invariant_image_equals_single_call(self):
        scorer = PixelSumScorer()
        img = blank_tile(size=8, value=120)  # uniform image is D4-invariant
        single = PixelSumScorer().score(img).probability
        res = tta_score(scorer, img)
        assert scorer.calls == 8
        assert res.probability == pytest.approx(single, abs=1e-9)

    def test_mean_of_eight_matches_independent_pil_oracle(self):
        rng = random.Random(77)
        arr = np.array([[[rng.randrange(256)] * 3 for _ in range(8)] for _ in range(8)],
                       dtype=np.uint8)
        img = image_from_array(arr)
        scorer = PixelSumScorer()
        res = tta_score(scorer, img)

        # Oracle: generate the 8 dihedral images with PIL and average their scores.
        pil = Image.frombytes("RGB", (8, 8), img.pixels)
        scores = []
        for op in PIL_DIHEDRAL:
            variant = pil if op is None else pil.transpose(op)
            t = TileImage(width=8, height=8, pixels=variant.tobytes(),
                          bounds=img.bounds, tile=img.tile)
            scores.append(PixelSumScorer().score(t).probability)
        assert res.probability == pytest.approx(sum(scores) / 8, abs=1e-9)

    def test_saliency_inverse_alignment(self):
        # The scorer's saliency mirrors its input; inverse transforms re-align all
        # eight grids onto the original orientation, so the mean is the original.
        rng = random.Random(78)
        arr = np.array([[[rng.randrange(256)] * 3 for _ in range(8)] for _ in range(8)],
                       dtype=np.uint8)
        img = image_from_array(arr)
        res = tta_score(PixelSumScorer(), img)
        np.testing.assert_allclose(res.saliency, arr[:, :, 0] / 255.0, atol=1e-12)

    def test_transform_inverse_identity_pixel_exact(self):
        grid = np.arange(64, dtype=np.int64).reshape(8, 8)
        for k, f in DIHEDRAL_ELEMENTS:
            back = dihedral_inverse(dihedral_transform(grid, k, f), k, f)
            assert np.array_equal(back, grid)

    def test_scorer_error_propagates(self):
        class Failing:
            model_version = "fail"

            def score(self, img):
                raise ScorerError("broken")

        with pytest.raises(ScorerError, match="broken"):
            tta_score(Failing(), blank_tile())

    def test_missing_saliency_on_any_transform_drops_saliency(self):
        class Alternating:
            model_version = "alt"

            def __init__(self):
                self.n = 0

            def score(self, img):
                self.n += 1
                sal = np.zeros((4, 4)) if self.n % 2 else None
                return ScoreResult(probability=0.5, model_version=self.model_version,
                                   saliency=sal)

        res = tta_score(Alternating(), blank_tile())
        assert res.saliency is None


class TestRemoteScore:
    def client(self, handler):
        return httpx.Client(transport=httpx.MockTransport(handler))

    def test_fixture_server_probability(self):
        def handler(request):
            assert request.headers["content-type"] == "image/png"
            assert request.content[:8] == b"\x89PNG\r\n\x1a\n"
            return httpx.Response(200, json={"probability": 0.83, "model_version": "m1"})

        res = remote_score("https://scorer.example/score", blank_tile(),
                           client=self.client(handler), sleep=lambda s: None)
        assert res.probability == 0.83
        assert res.model_version == "m1"

    def test_out_of_range_probability_is_protocol_error(self):
        handler = lambda request: httpx.Response(
            200, json={"probability": 1.5, "model_version": "m1"})
        with pytest.raises(RemoteScorerProtocolError):
            remote_score("https://scorer.example/score", blank_tile(),
                         client=self.client(handler), sleep=lambda s: None)

    def test_transport_error_after_retries(self):
        calls = []

        def handler(request):
            calls.append(1)
            raise httpx.ConnectError("down")

        with pytest.raises(RemoteScorerTransportError, match="3 attempts"):
            remote_score("https://scorer.example/score", blank_tile(), retries=2,
                         client=self.client(handler), sleep=lambda s: None)
        assert len(calls) == 3

    def test_saliency_decoding(self):
        handler = lambda request: httpx.Response(200, json={
            "probability": 0.4, "model_version": "m2",
            "saliency": [0.0, 0.5, 1.0, 0.25], "saliency_size": [2, 2]})
        res = remote_score("https://scorer.example/score", blank_tile(),
                           client=self.client(handler), sleep=lambda s: None)
        assert res.saliency.shape == (2, 2)
        assert res.saliency[0, 1] == 0.5

    def test_bad_saliency_size_rejected(self):
        handler = lambda request: httpx.Response(200, json={
            "probability": 0.4, "model_version": "m2",
            "saliency": [0.0, 0.5], "saliency_size": [2, 2]})
        with pytest.raises(RemoteScorerProtocolError, match="saliency"):
            remote_score("https://scorer.example/score", blank_tile(),
                         client=self.client(handler), sleep=lambda s: None)

    def test_missing_model_version_rejected(self):
        handler = lambda request: httpx.Response(200, json={"probability": 0.4})
        with pytest.raises(RemoteScorerProtocolError, match="model_version"):
            remote_score("https://scorer.example/score", blank_tile(),
                         client=self.client(handler), sleep=lambda s: None)


class FakeGapCell:
    def __init__(self, lat, lon, gap):
        self.center = GeoPoint(lat, lon)
        self.gap_score = gap


def plain_tile_source(tile):
    return blank_tile(tile=tile)


class TestGenerateCandidates:
    z = 15
    # Cell centered on a specific z15 tile pair.
    tile_a = TileIndex(15, 16400, 16350)

    def cell_over(self, tile, gap=0.9):
        b = tile_bounds(tile)
        return FakeGapCell((b.min_lat + b.max_lat) / 2, (b.min_lon + b.max_lon) / 2, gap)

    def test_no_tile_reaches_threshold(self):
        cells = [self.cell_over(self.tile_a)]
        scorer = ConstantScorer(0.2)
        cands, report = generate_candidates(cells, scorer, plain_tile_source,
                                            cell_m=300, z=self.z, p_min=0.7)
        assert cands == []
        assert report["qualifying"] == 0

    def test_candidate_at_footprint_centroid(self):
        bounds = tile_bounds(self.tile_a)
        lat = (bounds.min_lat + bounds.max_lat) / 2
        lon = (bounds.min_lon + bounds.max_lon) / 2 + (bounds.max_lon - bounds.min_lon) / 4
        buildings = FootprintIndex.build([("b1", square_ring(lat, lon, 1e-4))])
        scorer = FixtureScorer({self.tile_a.key(): 0.95}, default=0.0)
        cands, _ = generate_candidates([self.cell_over(self.tile_a)], scorer,
                                       plain_tile_source, cell_m=300, z=self.z,
                                       p_min=0.7, buildings=buildings)
        assert len(cands) == 1
        assert cands[0].snapped_building_id == "b1"
        assert cands[0].point.lat == pytest.approx(lat, abs=1e-12)
        assert cands[0].point.lon == pytest.approx(lon, abs=1e-12)

    def test_adjacent_tiles_sharing_building_deduped(self):
        t1 = self.tile_a
        t2 = TileIndex(self.z, t1.x + 1, t1.y)
        b1, b2 = tile_bounds(t1), tile_bounds(t2)
        assert b1.max_lon == b2.min_lon
        edge_lat = (b1.min_lat + b1.max_lat) / 2
        # Centroid exactly on the shared edge: contained in both tiles' bounds.
        building = square_ring(edge_lat, b1.max_lon, 2 ** -16)
        buildings = FootprintIndex.build([("shared", building)])
        assert building.centroid().lon == b1.max_lon
        scorer = FixtureScorer({t1.key(): 0.8, t2.key(): 0.9}, default=0.0)
        cells = [self.cell_over(t1), self.cell_over(t2)]
        cands, report = generate_candidates(cells, scorer, plain_tile_source,
                                            cell_m=300, z=self.z, p_min=0.7,
                                            buildings=buildings)
        assert len(cands) == 1
        assert cands[0].probability == pytest.approx(0.9, abs=1e-12)
        assert cands[0].tile == t2
        assert report["suppressed"] == 1

    def test_tile_fetch_failure_skipped_and_reported(self):
        def failing_source(tile):
            raise IOError("fetch failed")

        cands, report = generate_candidates([self.cell_over(self.tile_a)],
                                            ConstantScorer(0.9), failing_source,
                                            cell_m=300, z=self.z, p_min=0.5)
        assert cands == []
        assert report["tiles_failed"]
        assert "fetch failed" in report["tiles_failed"][0]["error"]

    def test_uncertainty_tracks_probability(self):
        c = Candidate(id="c", point=GeoPoint(0, 0), tile=TileIndex(5, 1, 1),
                      probability=0.8)
        assert c.uncertainty == pytest.approx(0.3)

    def test_output_independent_of_cell_order_at_equal_gap(self):
        t1 = self.tile_a
        t2 = TileIndex(self.z, t1.x + 4, t1.y)
        scorer = FixtureScorer({t1.key(): 0.8, t2.key(): 0.9}, default=0.0)
        cells = [self.cell_over(t1, gap=0.5), self.cell_over(t2, gap=0.5)]
        forward, _ = generate_candidates(cells, scorer, plain_tile_source,
                                         cell_m=300, z=self.z, p_min=0.7)
        backward, _ = generate_candidates(list(reversed(cells)), scorer,
                                          plain_tile_source, cell_m=300,
                                          z=self.z, p_min=0.7)
        assert [c.id for c in forward] == [c.id for c in backward]
        assert [c.probability for c in forward] == [c.probability for c in backward]


class TestRankReviewQueue:
    def cand(self, cid, p, status="pending"):
        return Candidate(id=cid, point=GeoPoint(0, 0), tile=TileIndex(5, 1, 1),
                         probability=p, status=status)

    def test_half_probability_sorts_first(self):
        cands = [self.cand("a", 0.9), self.cand("b", 0.5), self.cand("c", 0.6)]
        assert [c.id for c in rank_review_queue(cands)] == ["b", "c", "a"]

    def test_symmetric_probabilities_tie_on_id(self):
        cands = [self.cand("z", 0.1), self.cand("a", 0.9)]
        assert [c.id for c in rank_review_queue(cands)] == ["a", "z"]

    def test_non_pending_excluded(self):
        cands = [self.cand("a", 0.5, status="confirmed"), self.cand("b", 0.9)]
        assert [c.id for c in rank_review_queue(cands)] == ["b"]

    def test_matches_selection_sort_oracle(self):
        rng = random.Random(55)
        cands = [self.cand(f"c{i:04d}", round(rng.random(), 6)) for i in range(1000)]
        got = [c.id for c in rank_review_queue(cands)]

        # Oracle: repeated minimum extraction with an explicit comparison.
        pool = list(cands)
        expected = []
        while pool:
            best = pool[0]
            for c in pool[1:]:
                if (abs(c.probability - 0.5), c.id) < (abs(best.probability - 0.5), best.id):
                    best = c
            expected.append(best.id)
            pool.remove(best)
        assert got == expected
