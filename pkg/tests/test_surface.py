import numpy as np
import pytest
from sklearn.base import clone

from irmap.data import ScalingSpec, embed
from irmap.surface import (PanelEmbedding, dump_model, family_of, fit_surface, load_model,
                           make_estimator, make_surface_model, model_from_dict, model_to_dict,
                           scaling_of)

SMALL = {
    "idw": {"power": 2.0},
    "kriging": {"variogram_model": "spherical"},
    "svr": {"C": 5.0, "epsilon": 0.01, "sigma": 0.3},
    "mlp": {"hidden_layer_sizes": (5,), "max_epochs": 200},
}


class TestPanelEmbedding:
    def test_learns_box(self):
        X = np.array([[0.25, 10.0], [120.0, 40.0], [60.0, 25.0]])
        emb = PanelEmbedding().fit(X)
        U = emb.transform(X)
        assert U.min(axis=0).tolist() == [0.0, 0.0] and U.max(axis=0).tolist() == [1.0, 1.0]

    def test_fixed_scaling(self):
        spec = ScalingSpec(0.0, 120.0, 0.0, 99.0, 2.0)
        emb = PanelEmbedding(spec.to_dict()).fit(np.zeros((1, 2)))
        u, v = embed(spec, [60.0], [33.0])
        assert np.array_equal(emb.transform([[60.0, 33.0]]), np.column_stack([u, v]))

    def test_clone(self):
        emb = PanelEmbedding(anisotropy=3.0)
        assert clone(emb).get_params() == emb.get_params()


class TestFactory:
    def test_unknown_family(self):
        with pytest.raises(ValueError):
            make_estimator("forest")

    @pytest.mark.parametrize("family", sorted(SMALL))
    def test_family_round_trip(self, family):
        assert family_of(make_estimator(family)) == family

    def test_pipeline_from_name(self):
        pipe = make_surface_model("idw")
        assert [name for name, _ in pipe.steps] == ["embed", "model"]


class TestPersistence:
    @pytest.mark.parametrize("family", sorted(SMALL))
    def test_dump_load_predicts_identically(self, family, small_panel, tmp_path):
        model = fit_surface(make_estimator(family, **SMALL[family]), small_panel)
        path = tmp_path / "model.json"
        dump_model(model, path, note="x")
        again, doc = load_model(path)
        Q = np.column_stack([np.linspace(0.2, 120, 17), np.linspace(0, 39, 17)])
        assert np.array_equal(again.predict(Q), model.predict(Q))
        assert doc["note"] == "x" and doc["family"] == family
        assert scaling_of(again) == scaling_of(model)

    def test_bad_format(self, small_panel):
        d = model_to_dict(fit_surface(make_estimator("idw"), small_panel))
        d["format"] = 99
        with pytest.raises(ValueError):
            model_from_dict(d)

    def test_fit_on_subset_keeps_panel_scaling(self, small_panel):
        model = fit_surface(make_estimator("idw"), small_panel, index=np.arange(50))
        assert scaling_of(model) == small_panel.scaling
