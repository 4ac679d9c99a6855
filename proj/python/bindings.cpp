#include "rockseg/clustering.hpp"
#include "rockseg/ede.hpp"
#include "rockseg/error.hpp"
#include "rockseg/filters.hpp"
#include "rockseg/io.hpp"
#include "rockseg/petrophysics.hpp"
#include "rockseg/pipeline.hpp"
#include "rockseg/supervised.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace rockseg;

namespace {

// Arrays are (nz, ny, nx), C order.
py::array_t<std::uint16_t> volume_array(const VoxelVolume& v) {
    py::array_t<std::uint16_t> a({v.nz(), v.ny(), v.nx()});
    std::copy(v.data().begin(), v.data().end(), a.mutable_data());
    return a;
}

py::array_t<std::uint8_t> labels_array(const LabelVolume& l) {
    py::array_t<std::uint8_t> a({l.nz(), l.ny(), l.nx()});
    std::copy(l.labels().begin(), l.labels().end(), a.mutable_data());
    return a;
}

Dims dims_of(const py::buffer_info& b) {
    if (b.ndim != 3) throw py::value_error("expected a 3-D array (nz, ny, nx)");
    return Dims{static_cast<std::size_t>(b.shape[2]), static_cast<std::size_t>(b.shape[1]),
                static_cast<std::size_t>(b.shape[0])};
}

VoxelVolume volume_from(py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast> a, int bit_depth,
                        double voxel_size) {
    const auto b = a.request();
    const Dims d = dims_of(b);
    const auto* p = static_cast<const std::uint16_t*>(b.ptr);
    return VoxelVolume(d, bit_depth, voxel_size, std::vector<std::uint16_t>(p, p + d.count()));
}

LabelVolume labels_from(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> a, double voxel_size,
                        int k) {
    const auto b = a.request();
    const Dims d = dims_of(b);
    const auto* p = static_cast<const std::uint8_t*>(b.ptr);
    std::vector<std::uint8_t> v(p, p + d.count());
    if (k <= 0) k = v.empty() ? 0 : *std::max_element(v.begin(), v.end());
    return LabelVolume(d, voxel_size, std::move(v), k);
}

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_py(const py::object& o) {
    return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

TrainingTable table_from(const std::vector<std::tuple<int, long, long, long>>& rows) {
    TrainingTable t;
    for (const auto& [c, x, y, z] : rows) t.rows.push_back({c, "", x, y, z});
    return t;
}

struct PyModel {
    Model model;
};

py::dict cluster_dict(const ClusterResult& r) {
    py::dict d;
    d["labels"] = labels_array(r.labels);
    d["centers"] = r.centers;
    d["objective"] = r.objective;
    d["iterations"] = r.iterations_used;
    if (!r.objective_history.empty()) d["objective_history"] = r.objective_history;
    return d;
}

AnalysisParams analysis_params(int pore_class, double voxel_size, double sigma, int bins,
                               const std::vector<std::size_t>& edges, double band) {
    AnalysisParams p;
    p.pore_class = pore_class;
    p.voxel_size = voxel_size;
    p.smoothing_sigma = sigma;
    p.bins = bins;
    p.edges = edges;
    p.band = band;
    return p;
}

}  // namespace

PYBIND11_MODULE(_rockseg, m) {
    m.doc() = "Micro-CT segmentation, edge-enhancement removal and petrophysics";

    static py::exception<Error> error(m, "RocksegError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetObject(error.ptr(), py::make_tuple(e.what(), to_string(e.code())).ptr());
        }
    });

    py::class_<VoxelVolume>(m, "Volume")
        .def(py::init(&volume_from), py::arg("array"), py::arg("bit_depth") = 16, py::arg("voxel_size") = 1.0)
        .def_property_readonly("shape", [](const VoxelVolume& v) { return py::make_tuple(v.nz(), v.ny(), v.nx()); })
        .def_property_readonly("bit_depth", &VoxelVolume::bit_depth)
        .def_property_readonly("voxel_size", &VoxelVolume::voxel_size)
        .def("numpy", &volume_array)
        .def("sha256", [](const VoxelVolume& v) { return artifact_hash(v); })
        .def("__repr__", [](const VoxelVolume& v) {
            return "<Volume " + v.dims().str() + " " + std::to_string(v.bit_depth()) + "-bit>";
        });

    py::class_<LabelVolume>(m, "Labels")
        .def(py::init(&labels_from), py::arg("array"), py::arg("voxel_size") = 1.0, py::arg("k") = 0)
        .def_property_readonly("shape", [](const LabelVolume& l) { return py::make_tuple(l.nz(), l.ny(), l.nx()); })
        .def_property_readonly("k", &LabelVolume::k)
        .def_property_readonly("voxel_size", &LabelVolume::voxel_size)
        .def("numpy", &labels_array)
        .def("sha256", [](const LabelVolume& l) { return artifact_hash(l); });

    m.def(
        "load_raw",
        [](const std::filesystem::path& path, std::array<std::size_t, 3> dims, int bit_depth, const std::string& order,
           double voxel_size, bool transpose) {
            RawGeometry g{Dims{dims[0], dims[1], dims[2]}, bit_depth, parse_byte_order(order), voxel_size, transpose};
            return load_raw(path, g);
        },
        py::arg("path"), py::arg("dims"), py::arg("bit_depth") = 16, py::arg("byte_order") = "little",
        py::arg("voxel_size") = 1.0, py::arg("transpose") = false, "dims are (nx, ny, nz)");
    m.def("load_tiff_stack", &load_tiff_stack, py::arg("paths"), py::arg("voxel_size") = 1.0);
    m.def(
        "crop", [](const VoxelVolume& v, std::array<std::size_t, 6> r) { return crop(v, Roi{r[0], r[1], r[2], r[3], r[4], r[5]}); },
        py::arg("volume"), py::arg("roi"), "roi is (x0, y0, z0, dx, dy, dz)");
    m.def("downsample", &downsample, py::arg("volume"), py::arg("factor"));
    m.def(
        "to_vtk",
        [](const VoxelVolume& v, bool ascii) { return py::bytes(to_vtk(v, ascii ? VtkEncoding::ascii : VtkEncoding::binary)); },
        py::arg("volume"), py::arg("ascii") = false);
    m.def(
        "labels_to_vtk",
        [](const LabelVolume& l, bool ascii) { return py::bytes(to_vtk(l, ascii ? VtkEncoding::ascii : VtkEncoding::binary)); },
        py::arg("labels"), py::arg("ascii") = false);

    m.def(
        "nlm_filter",
        [](const VoxelVolume& v, int window, int neighborhood, double similarity, bool three_d) {
            NlmParams p{window, neighborhood, similarity, three_d};
            py::gil_scoped_release release;
            return nlm_filter(v, p);
        },
        py::arg("volume"), py::arg("search_window") = 21, py::arg("neighborhood") = 6, py::arg("similarity") = 0.71,
        py::arg("three_d") = true);
    m.def(
        "anisotropic_diffusion",
        [](const VoxelVolume& v, double threshold, int iterations, double sigma) {
            AdParams p{threshold, iterations, sigma};
            py::gil_scoped_release release;
            return anisotropic_diffusion(v, p);
        },
        py::arg("volume"), py::arg("threshold") = 22968.0, py::arg("iterations") = 5, py::arg("smoothing_sigma") = 0.0);
    m.def(
        "smooth",
        [](const VoxelVolume& v, const std::string& method, int radius, double sigma) {
            return smooth(v, parse_smooth_method(method), radius, sigma);
        },
        py::arg("volume"), py::arg("method") = "median", py::arg("radius") = 1, py::arg("sigma") = 0.0);
    m.def("contrast_stretch", &contrast_stretch, py::arg("volume"), py::arg("low") = 1.0, py::arg("high") = 99.0);

    m.def(
        "kmeans",
        [](const VoxelVolume& v, int k, const std::string& distance, int restarts, double mask, std::uint64_t seed,
           std::vector<double> initial_centers) {
            KmeansConfig c;
            c.k = k;
            c.distance = parse_distance(distance);
            c.restarts = restarts;
            c.mask_threshold = mask;
            c.seed = seed;
            c.initial_centers = std::move(initial_centers);
            ClusterResult r;
            {
                py::gil_scoped_release release;
                r = kmeans_segment(v, c);
            }
            return cluster_dict(r);
        },
        py::arg("volume"), py::arg("k") = 3, py::arg("distance") = "sqeuclidean", py::arg("restarts") = 5,
        py::arg("mask") = 0.0, py::arg("seed") = 42, py::arg("initial_centers") = std::vector<double>{});
    m.def(
        "fcm",
        [](const VoxelVolume& v, int c, double mexp, double mask, std::uint64_t seed) {
            FcmConfig cfg;
            cfg.c = c;
            cfg.m = mexp;
            cfg.mask_threshold = mask;
            cfg.seed = seed;
            return cluster_dict(fcm_segment(v, cfg));
        },
        py::arg("volume"), py::arg("c") = 3, py::arg("m") = 2.0, py::arg("mask") = 0.0, py::arg("seed") = 42);

    m.def(
        "dual_cluster_pipeline",
        [](const VoxelVolume& v, int k1, int final_k, std::vector<std::size_t> seg_slices, const std::string& map,
           int restarts, std::uint64_t seed, double mask) {
            EdeConfig c;
            c.k1 = k1;
            c.final_k = final_k;
            c.seg_slices = std::move(seg_slices);
            c.map = PhaseMap::parse(map);
            c.restarts = restarts;
            c.seed = seed;
            c.mask_threshold = mask;
            EdeResult r;
            {
                py::gil_scoped_release release;
                r = dual_cluster_pipeline(v, c);
            }
            py::dict d;
            d["labels"] = labels_array(r.final_labels);
            d["rescaled"] = volume_array(r.rescaled);
            d["over_labels"] = labels_array(r.over_labels);
            d["over_centers"] = r.over_centers;
            d["final_centers"] = r.final_centers;
            d["advisory"] = r.advisory;
            py::dict stats;
            for (const auto& p : r.stats.phases)
                stats[py::str(p.name)] = py::dict(py::arg("count") = p.count, py::arg("min") = p.min,
                                                  py::arg("max") = p.max, py::arg("mean") = p.mean,
                                                  py::arg("std") = p.std, py::arg("skewness") = p.skewness);
            d["stats"] = stats;
            return d;
        },
        py::arg("volume"), py::arg("k1") = 7, py::arg("final_k") = 3,
        py::arg("seg_slices") = std::vector<std::size_t>{0, 1}, py::arg("map") = "default", py::arg("restarts") = 5,
        py::arg("seed") = 42, py::arg("mask") = 0.0);

    m.def("porosity", &porosity, py::arg("labels"), py::arg("pore_class"));
    m.def("volume_fractions", &volume_fractions, py::arg("labels"));
    m.def(
        "analyze",
        [](const LabelVolume& l, const std::string& op, int pore_class, double voxel_size, double sigma, int bins,
           const std::vector<std::size_t>& edges, double band) {
            return to_py(analyze(l, parse_analysis_op(op), analysis_params(pore_class, voxel_size, sigma, bins, edges, band)).json);
        },
        py::arg("labels"), py::arg("op"), py::arg("pore_class") = 1, py::arg("voxel_size") = 0.0,
        py::arg("smoothing_sigma") = 1.0, py::arg("bins") = 20, py::arg("edges") = std::vector<std::size_t>{},
        py::arg("band") = 0.01, "op: porosity, trend, fractions, psd or rev");

    py::class_<PyModel>(m, "Model")
        .def("save", [](const PyModel& p) { return save_model(p.model); })
        .def_static("load", [](const std::string& text) { return PyModel{load_model(text)}; })
        .def("predict_volume",
             [](const PyModel& p, const VoxelVolume& v) {
                 py::gil_scoped_release release;
                 return classify_volume(p.model, v);
             })
        .def_property_readonly("kind", [](const PyModel& p) { return p.model.index() == 0 ? "lssvm" : "ensemble"; });

    m.def(
        "train",
        [](const VoxelVolume& v, const std::vector<std::tuple<int, long, long, long>>& rows, const std::string& method,
           double gamma, double sigma2, int n_learners, int max_depth, std::uint64_t seed) -> PyModel {
            const TrainingTable t = table_from(rows);
            t.validate(v.dims());
            const FeatureMatrix f = extract_features(v, t);
            if (method == "lssvm") {
                LssvmParams p;
                p.gamma = gamma;
                p.sigma2 = sigma2;
                return {train_lssvm(f, p)};
            }
            EnsembleParams p;
            p.method = parse_ensemble_method(method);
            p.n_learners = n_learners;
            p.max_depth = max_depth;
            p.seed = seed;
            return {train_ensemble(f, p)};
        },
        py::arg("volume"), py::arg("rows"), py::arg("method") = "lssvm", py::arg("gamma") = 10.0,
        py::arg("sigma2") = 36.0, py::arg("n_learners") = 50, py::arg("max_depth") = 3, py::arg("seed") = 42,
        "rows are (class, x, y, slice)");

    m.def(
        "run_config",
        [](const py::object& config, const std::filesystem::path& base_dir) {
            const auto cfg = parse_run_config(from_py(config), base_dir, "config");
            RunResult r;
            {
                py::gil_scoped_release release;
                r = execute(cfg);
            }
            return to_py(r.manifest);
        },
        py::arg("config"), py::arg("base_dir") = std::filesystem::path("."),
        "Runs a stage chain and returns its manifest");
    m.def(
        "replay",
        [](const std::filesystem::path& manifest, std::optional<std::filesystem::path> out) {
            const auto r = rockseg::replay(manifest, out);
            py::dict d;
            d["identical"] = r.identical;
            d["mismatches"] = r.mismatches;
            return d;
        },
        py::arg("manifest"), py::arg("output_dir") = py::none());
}
