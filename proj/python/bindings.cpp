#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dsrnet/blocks.hpp"
#include "dsrnet/data.hpp"
#include "dsrnet/losses.hpp"
#include "dsrnet/metrics.hpp"
#include "dsrnet/model.hpp"
#include "dsrnet/train.hpp"

namespace py = pybind11;
using namespace dsrnet;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// numpy (H,W,3) <-> Tensor (3,H,W)
Tensor image_from_numpy(const NpArray& a) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw ShapeError("expected an (H,W,3) array");
    Tensor t({3, a.shape(0), a.shape(1)});
    auto r = a.unchecked<3>();
    for (py::ssize_t y = 0; y < a.shape(0); ++y)
        for (py::ssize_t x = 0; x < a.shape(1); ++x)
            for (py::ssize_t c = 0; c < 3; ++c) t.at(c, y, x) = r(y, x, c);
    return t;
}

py::array image_to_numpy(const Tensor& t) {
    py::array_t<double> out({t.dim(1), t.dim(2), int64_t{3}});
    auto w = out.mutable_unchecked<3>();
    for (int64_t y = 0; y < t.dim(1); ++y)
        for (int64_t x = 0; x < t.dim(2); ++x)
            for (int64_t c = 0; c < 3; ++c) w(y, x, c) = t.at(c, y, x);
    return out;
}

// numpy (C,H,W) <-> feature Tensor
Tensor grid_from_numpy(const NpArray& a) {
    if (a.ndim() != 3) throw ShapeError("expected a (C,H,W) array");
    Tensor t({a.shape(0), a.shape(1), a.shape(2)});
    std::copy(a.data(), a.data() + t.numel(), t.data());
    return t;
}

py::array grid_to_numpy(const Tensor& t) {
    py::array_t<double> out({t.dim(0), t.dim(1), t.dim(2)});
    std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
    return out;
}

class PyModel {
public:
    PyModel(int64_t width, int64_t backbone_width, const std::string& interaction,
            const std::string& encoder, bool tied, bool with_lrm, uint64_t seed,
            const std::string& backbone_weights) {
        cfg_.base_width = width;
        cfg_.backbone_width = backbone_width;
        cfg_.interaction = interaction_from_string(interaction);
        cfg_.encoder = encoder_from_string(encoder);
        cfg_.tied_streams = tied;
        cfg_.with_lrm = with_lrm;
        cfg_.validate();
        model_.emplace(cfg_);
        params_ = model_->init_params(seed);
        if (cfg_.encoder != Encoder::None) {
            if (!backbone_weights.empty()) {
                backbone_ = VggBackbone::load(backbone_weights);
            } else {
                BackboneConfig bc;
                bc.width = backbone_width;
                backbone_ = VggBackbone::seeded_random(bc, derive_seed(seed, 0xbacbe));
            }
        }
    }

    py::dict infer(const NpArray& image, bool with_residue) {
        Tensor img = image_from_numpy(image);
        Decomposition d = model_->infer(img, backbone_ ? &*backbone_ : nullptr, params_,
                                        with_residue && cfg_.with_lrm);
        py::dict out;
        out["transmission"] = image_to_numpy(d.transmission);
        out["reflection"] = image_to_numpy(d.reflection);
        out["residue"] = image_to_numpy(d.residue);
        return out;
    }

    int64_t parameter_count() const { return params_.total_elements(); }

private:
    ModelConfig cfg_;
    std::optional<DsrNet> model_;
    std::optional<VggBackbone> backbone_;
    ParamStore params_;
};

} // namespace

PYBIND11_MODULE(_dsrnet, m) {
    m.doc() = "Dual-stream reflection separation core";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ResourceError>(m, "ResourceError", PyExc_IOError);

    m.def(
        "screen_blend",
        [](const NpArray& t, const NpArray& r, double g1, double g2) {
            return image_to_numpy(screen_blend(image_from_numpy(t), image_from_numpy(r), g1, g2));
        },
        py::arg("t"), py::arg("r"), py::arg("gamma1"), py::arg("gamma2"),
        "screen-blend superposition of a transmission and a reflection layer");

    m.def(
        "sample_gammas",
        [](uint64_t seed, int64_t n) {
            Rng rng(seed);
            py::array_t<double> out({n, int64_t{2}});
            auto w = out.mutable_unchecked<2>();
            for (int64_t i = 0; i < n; ++i) {
                auto [g1, g2] = sample_gammas(rng);
                w(i, 0) = g1;
                w(i, 1) = g2;
            }
            return out;
        },
        py::arg("seed"), py::arg("n") = 1);

    m.def(
        "mugi_gate",
        [](const NpArray& ft, const NpArray& fr) {
            auto [ot, orr] = mugi_gate(constant(grid_from_numpy(ft)), constant(grid_from_numpy(fr)));
            return py::make_tuple(grid_to_numpy(ot->value), grid_to_numpy(orr->value));
        },
        py::arg("f_t"), py::arg("f_r"),
        "mutually-gated interaction of two (C,H,W) feature grids");

    m.def(
        "psnr",
        [](const NpArray& a, const NpArray& b) {
            return psnr(image_from_numpy(a), image_from_numpy(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "ssim",
        [](const NpArray& a, const NpArray& b, bool grayscale) {
            SsimOptions opts;
            opts.grayscale = grayscale;
            return ssim(image_from_numpy(a), image_from_numpy(b), opts);
        },
        py::arg("a"), py::arg("b"), py::arg("grayscale") = false);

    m.def(
        "pixel_loss",
        [](const NpArray& pt, const NpArray& pr, const NpArray& gt, const NpArray& gr,
           double alpha) {
            return pixel_loss(constant(image_from_numpy(pt)), constant(image_from_numpy(pr)),
                              constant(image_from_numpy(gt)), constant(image_from_numpy(gr)),
                              alpha)
                ->value[0];
        },
        py::arg("pred_t"), py::arg("pred_r"), py::arg("gt_t"), py::arg("gt_r"),
        py::arg("alpha") = 2.0);

    m.def(
        "exclusion_loss",
        [](const NpArray& pt, const NpArray& pr, int scales) {
            return exclusion_loss(constant(image_from_numpy(pt)), constant(image_from_numpy(pr)),
                                  scales, EtaPolicy{})
                ->value[0];
        },
        py::arg("pred_t"), py::arg("pred_r"), py::arg("scales") = 3);

    m.def(
        "r3_loss",
        [](const NpArray& input, const NpArray& pt, const NpArray& pr, const NpArray& residue) {
            return r3_loss(constant(image_from_numpy(input)), constant(image_from_numpy(pt)),
                           constant(image_from_numpy(pr)), constant(image_from_numpy(residue)))
                ->value[0];
        },
        py::arg("input"), py::arg("pred_t"), py::arg("pred_r"), py::arg("residue"));

    m.def(
        "aggregate",
        [](const std::vector<int64_t>& counts, const std::vector<double>& psnrs,
           const std::vector<double>& ssims) {
            if (counts.size() != psnrs.size() || counts.size() != ssims.size())
                throw ShapeError("aggregate: mismatched row counts");
            std::vector<DatasetScore> rows;
            for (size_t i = 0; i < counts.size(); ++i)
                rows.push_back({"subset" + std::to_string(i), counts[i], psnrs[i], ssims[i]});
            auto [wp, ws] = aggregate_scores(rows);
            return py::make_tuple(wp, ws);
        },
        py::arg("image_counts"), py::arg("mean_psnrs"), py::arg("mean_ssims"),
        "image-count-weighted averages of per-dataset means");

    py::class_<PyModel>(m, "DsrNet")
        .def(py::init<int64_t, int64_t, const std::string&, const std::string&, bool, bool,
                      uint64_t, const std::string&>(),
             py::arg("width") = 16, py::arg("backbone_width") = 16,
             py::arg("interaction") = "mugi", py::arg("encoder") = "dsfnet",
             py::arg("tied_streams") = false, py::arg("with_lrm") = true, py::arg("seed") = 0,
             py::arg("backbone_weights") = "")
        .def("infer", &PyModel::infer, py::arg("image"), py::arg("with_residue") = true,
             "decompose an (H,W,3) image in [0,1]; returns transmission/reflection/residue")
        .def_property_readonly("parameter_count", &PyModel::parameter_count);
}
