#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pyraflow/checkpoint.hpp"
#include "pyraflow/eval.hpp"
#include "pyraflow/flowio.hpp"
#include "pyraflow/pyramid.hpp"
#include "pyraflow/synth.hpp"
#include "pyraflow/train.hpp"

namespace py = pybind11;
using namespace pyraflow;

namespace {

Tensor tensor_from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3) throw ConfigError("expected a [C, H, W] float32 array");
    const int c = static_cast<int>(a.shape(0));
    const int h = static_cast<int>(a.shape(1));
    const int w = static_cast<int>(a.shape(2));
    std::vector<float> data(a.data(), a.data() + a.size());
    return Tensor::from_data(c, h, w, std::move(data));
}

py::array_t<float> tensor_to_numpy(const Tensor& t) {
    py::array_t<float> a({t.channels(), t.height(), t.width()});
    std::copy(t.data(), t.data() + t.size(), a.mutable_data());
    return a;
}

ConvLayer make_layer(int in_channels, int out_channels, int kernel, bool relu,
                     std::vector<float> weights, std::vector<float> bias) {
    ConvLayer layer;
    layer.in_channels = in_channels;
    layer.out_channels = out_channels;
    layer.kernel = kernel;
    layer.activation = relu ? Activation::relu : Activation::none;
    layer.weights = std::move(weights);
    layer.bias = std::move(bias);
    layer.validate();
    return layer;
}

}  // namespace

PYBIND11_MODULE(pyraflow, m) {
    m.doc() = "spatial-pyramid optical flow: core operations";

    py::register_exception<Error>(m, "PyraflowError");

    py::class_<ConvLayer>(m, "ConvLayer")
        .def(py::init(&make_layer), py::arg("in_channels"), py::arg("out_channels"),
             py::arg("kernel"), py::arg("relu"), py::arg("weights"), py::arg("bias"))
        .def_readonly("in_channels", &ConvLayer::in_channels)
        .def_readonly("out_channels", &ConvLayer::out_channels)
        .def_readonly("kernel", &ConvLayer::kernel)
        .def("param_count", &ConvLayer::param_count);

    m.def("conv2d",
          [](const py::array_t<float>& input, const ConvLayer& layer) {
              return tensor_to_numpy(conv2d(tensor_from_numpy(input), layer));
          },
          py::arg("input"), py::arg("layer"));
    m.def("warp",
          [](const py::array_t<float>& image, const py::array_t<float>& flow) {
              return tensor_to_numpy(warp(tensor_from_numpy(image), tensor_from_numpy(flow)));
          },
          py::arg("image"), py::arg("flow"));
    m.def("avg_downsample2x", [](const py::array_t<float>& input) {
        return tensor_to_numpy(avg_downsample2x(tensor_from_numpy(input)));
    });
    m.def("bilinear_upsample2x",
          [](const py::array_t<float>& input, int out_h, int out_w) {
              return tensor_to_numpy(
                  bilinear_upsample2x(tensor_from_numpy(input), out_h, out_w));
          },
          py::arg("input"), py::arg("out_h"), py::arg("out_w"));
    m.def("epe_loss",
          [](const py::array_t<float>& pred, const py::array_t<float>& gt,
             const py::array_t<float>& mask, float eps) {
              EpeResult r = epe_loss(tensor_from_numpy(pred), tensor_from_numpy(gt),
                                     tensor_from_numpy(mask), eps);
              return py::make_tuple(r.loss, tensor_to_numpy(r.grad));
          },
          py::arg("pred"), py::arg("gt"), py::arg("mask"), py::arg("eps") = 1e-8f);

    py::class_<PyramidConfig>(m, "PyramidConfig")
        .def(py::init(&PyramidConfig::defaults))
        .def_readwrite("levels", &PyramidConfig::levels)
        .def_readwrite("base_h", &PyramidConfig::base_h)
        .def_readwrite("base_w", &PyramidConfig::base_w)
        .def_readwrite("seed", &PyramidConfig::seed);

    py::class_<PyramidNet>(m, "PyramidNet")
        .def(py::init([](const PyramidConfig& c) { return init_net(c); }),
             py::arg("config"))
        .def("count_params", [](const PyramidNet& net) { return count_params(net); })
        .def("forward",
             [](const PyramidNet& net, const py::array_t<float>& img1,
                const py::array_t<float>& img2) {
                 const auto flows =
                     forward(net, tensor_from_numpy(img1), tensor_from_numpy(img2));
                 return tensor_to_numpy(flows[0]);
             },
             py::arg("img1"), py::arg("img2"))
        .def("save",
             [](const PyramidNet& net, const std::string& path) {
                 save_checkpoint(net, CheckpointMeta{}, path);
             },
             py::arg("path"))
        .def_static("load", [](const std::string& path) {
            return load_checkpoint(path).first;
        });

    m.def("checkpoint_size_bytes",
          [](const PyramidNet& net) { return checkpoint_size_bytes(net); });

    m.def("read_flo", [](const std::string& path) { return tensor_to_numpy(read_flo(path)); });
    m.def("write_flo", [](const std::string& path, const py::array_t<float>& flow) {
        write_flo(path, tensor_from_numpy(flow));
    });
    m.def("read_ppm", [](const std::string& path) { return tensor_to_numpy(read_ppm(path)); });
    m.def("flow_to_color",
          [](const py::array_t<float>& flow, float max_norm) {
              return tensor_to_numpy(flow_to_color(tensor_from_numpy(flow), max_norm));
          },
          py::arg("flow"), py::arg("max_norm") = 0.0f);

    m.def("generate_dataset",
          [](const std::string& out_dir, int count, std::uint64_t seed,
             bool translation_only) {
              GenConfig c;
              c.count = count;
              c.seed = seed;
              c.translation_only = translation_only;
              generate_dataset(c, out_dir);
          },
          py::arg("out_dir"), py::arg("count"), py::arg("seed") = 1,
          py::arg("translation_only") = false);

    m.def("evaluate",
          [](const PyramidNet& net, const std::string& data_dir) {
              const EpeReport r = evaluate(net, load_dataset(data_dir));
              py::dict d;
              d["mean_epe"] = r.mean;
              d["median_epe"] = r.median;
              d["outlier_fraction"] = r.outlier_fraction;
              d["sample_count"] = r.sample_count;
              return d;
          },
          py::arg("net"), py::arg("data_dir"));
    m.def("zero_flow_baseline", [](const std::string& data_dir) {
        const EpeReport r = zero_flow_baseline(load_dataset(data_dir));
        py::dict d;
        d["mean_epe"] = r.mean;
        d["median_epe"] = r.median;
        d["outlier_fraction"] = r.outlier_fraction;
        d["sample_count"] = r.sample_count;
        return d;
    });
}
