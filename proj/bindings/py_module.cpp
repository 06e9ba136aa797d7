// Python bindings for the core library: numpy-backed ops, the rng, model
// construction and forward passes, schedules, data utilities, and the
// gradient-check harness.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "budgetnet/config.hpp"
#include "budgetnet/data.hpp"
#include "budgetnet/gradcheck.hpp"
#include "budgetnet/init.hpp"
#include "budgetnet/model.hpp"
#include "budgetnet/ops.hpp"
#include "budgetnet/optim.hpp"
#include "budgetnet/rng.hpp"
#include "budgetnet/tensor.hpp"

namespace py = pybind11;
using namespace bnet;

namespace {

template <typename T>
Tensor<T> tensor_from(const py::array& any) {
    auto a = py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(any);
    if (!a) throw UsageError("expected a numeric array");
    std::vector<int64_t> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    Tensor<T> t(shape);
    std::memcpy(t.data.data(), a.data(), sizeof(T) * t.data.size());
    return t;
}

template <typename T>
py::array_t<T> array_from(const Tensor<T>& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<T> a(shape);
    std::memcpy(a.mutable_data(), t.data.data(), sizeof(T) * t.data.size());
    return a;
}

bool is_double(const py::array& a) { return a.dtype().is(py::dtype::of<double>()); }

// Run `fn` in float64 when the first input is float64, else float32.
template <typename Fn>
py::object dispatch(const py::array& lead, Fn&& fn) {
    if (is_double(lead)) return fn(double{});
    return fn(float{});
}

std::vector<int> labels_from(const py::object& labels) {
    return labels.cast<std::vector<int>>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "small residual networks under a parameter budget";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

    py::class_<RngStream>(m, "RngStream")
        .def(py::init<uint64_t>(), py::arg("seed"))
        .def("next_u64", &RngStream::next_u64)
        .def("uniform", &RngStream::uniform)
        .def("uniform_int", &RngStream::uniform_int, py::arg("bound"))
        .def("normal", &RngStream::normal)
        .def("seed", &RngStream::seed)
        .def("draws", &RngStream::draws)
        .def("set_state", &RngStream::set_state, py::arg("seed"), py::arg("draws"));

    py::class_<ResNetConfig>(m, "ResNetConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ResNetConfig::n_layers)
        .def_readwrite("blocks", &ResNetConfig::blocks)
        .def_readwrite("channels", &ResNetConfig::channels)
        .def_readwrite("conv_kernels", &ResNetConfig::conv_kernels)
        .def_readwrite("skip_kernels", &ResNetConfig::skip_kernels)
        .def_readwrite("pool_kernel", &ResNetConfig::pool_kernel)
        .def_readwrite("se_enabled", &ResNetConfig::se_enabled)
        .def_readwrite("se_ratio", &ResNetConfig::se_ratio)
        .def_readwrite("dropout_p", &ResNetConfig::dropout_p)
        .def_readwrite("num_classes", &ResNetConfig::num_classes)
        .def("validate", &ResNetConfig::validate);

    m.def("avgpool_kernel", &avgpool_kernel, py::arg("n_layers"));
    m.def("count_params", &count_params, py::arg("config"));

    py::class_<Model>(m, "Model")
        .def(
            "forward",
            [](Model& self, const py::array& x, bool train, py::object rng) {
                RngStream* r = rng.is_none() ? nullptr : rng.cast<RngStream*>();
                const TensorF y = self.forward(tensor_from<float>(x),
                                               train ? ops::Mode::kTrain : ops::Mode::kEval, r);
                return array_from(y);
            },
            py::arg("x"), py::arg("train") = false, py::arg("rng") = py::none())
        .def("total_params", &Model::total_params)
        .def("parameter_names",
             [](Model& self) {
                 std::vector<std::string> names;
                 for (const auto& p : self.parameters()) names.push_back(p.name);
                 return names;
             })
        .def("state_dict", [](Model& self) {
            py::dict d;
            for (const auto& p : self.state_tensors()) d[p.name.c_str()] = array_from(*p.tensor);
            return d;
        });

    m.def(
        "build_model",
        [](ResNetConfig config, const std::string& init, double normal_std, uint64_t seed) {
            InitScheme scheme{init_kind_from_string(init), normal_std};
            RngStream rng(seed);
            return build(std::move(config), scheme, rng);
        },
        py::arg("config"), py::arg("init") = "he", py::arg("normal_std") = 0.01,
        py::arg("seed") = 42);

    // --- ops (float32 or float64 by input dtype) ----------------------------

    m.def(
        "conv2d",
        [](const py::array& x, const py::array& w, int64_t stride, int64_t padding) {
            return dispatch(x, [&](auto tag) -> py::object {
                using T = decltype(tag);
                return array_from(
                    ops::conv2d_forward(tensor_from<T>(x), tensor_from<T>(w), stride, padding));
            });
        },
        py::arg("x"), py::arg("weight"), py::arg("stride") = 1, py::arg("padding") = 0);

    m.def("relu", [](const py::array& x) {
        return dispatch(x, [&](auto tag) -> py::object {
            using T = decltype(tag);
            return array_from(ops::relu(tensor_from<T>(x)));
        });
    });

    m.def(
        "avgpool",
        [](const py::array& x, int64_t pool) {
            return dispatch(x, [&](auto tag) -> py::object {
                using T = decltype(tag);
                return array_from(ops::avgpool_forward(tensor_from<T>(x), pool));
            });
        },
        py::arg("x"), py::arg("pool"));

    m.def(
        "softmax_cross_entropy",
        [](const py::array& logits, const py::object& labels) {
            const auto lab = labels_from(labels);
            return dispatch(logits, [&](auto tag) {
                using T = decltype(tag);
                const auto r = ops::softmax_cross_entropy(tensor_from<T>(logits), lab);
                return py::make_tuple(r.loss, array_from(r.grad_logits));
            });
        },
        py::arg("logits"), py::arg("labels"));

    // --- schedules -----------------------------------------------------------

    py::class_<Schedule>(m, "Schedule")
        .def(py::init<>())
        .def_readwrite("base_lr", &Schedule::base_lr)
        .def_readwrite("t_max", &Schedule::t_max)
        .def_readwrite("eta_min", &Schedule::eta_min)
        .def_readwrite("step_size", &Schedule::step_size)
        .def_readwrite("milestones", &Schedule::milestones)
        .def_readwrite("gamma", &Schedule::gamma)
        .def_readwrite("max_lr", &Schedule::max_lr)
        .def_readwrite("total_steps", &Schedule::total_steps)
        .def_readwrite("pct_start", &Schedule::pct_start)
        .def_readwrite("t0", &Schedule::t0)
        .def_readwrite("t_mult", &Schedule::t_mult)
        .def_property(
            "kind", [](const Schedule& s) { return std::string(schedule_kind_name(s.kind)); },
            [](Schedule& s, const std::string& name) { s.kind = schedule_kind_from_string(name); });

    m.def("schedule_lr", &schedule_lr, py::arg("schedule"), py::arg("t"));

    // --- data ----------------------------------------------------------------

    m.def(
        "augment",
        [](const py::array& image, RngStream& rng) {
            auto a = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>::ensure(image);
            if (!a || a.size() != kImageBytes)
                throw UsageError("augment expects a 3072-byte image array");
            std::vector<py::ssize_t> shape(a.ndim());
            for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
            py::array_t<uint8_t> out(shape);
            augment(a.data(), out.mutable_data(), rng);
            return out;
        },
        py::arg("image"), py::arg("rng"));

    const auto dataset_tuple = [](const Dataset& d) {
        py::array_t<uint8_t> x({py::ssize_t(d.count()), py::ssize_t(kImageBytes)});
        std::memcpy(x.mutable_data(), d.pixels.data(), d.pixels.size());
        py::array_t<uint8_t> y(py::ssize_t(d.count()));
        std::memcpy(y.mutable_data(), d.labels.data(), d.labels.size());
        return py::make_tuple(x, y);
    };

    m.def("load_cifar_file",
          [dataset_tuple](const std::string& path) { return dataset_tuple(load_cifar_file(path)); },
          py::arg("path"));
    m.def("load_cifar10",
          [dataset_tuple](const std::string& dir) {
              const auto [train, test] = load_cifar10(dir);
              return py::make_tuple(dataset_tuple(train), dataset_tuple(test));
          },
          py::arg("dir"));

    // --- config text and gradient checks --------------------------------------

    m.def(
        "parse_config",
        [](const std::string& text) {
            TrainConfig cfg = TrainConfig::from_string(text, "<python>");
            cfg.validate();
            return py::make_tuple(cfg.model, cfg.to_string());
        },
        py::arg("text"), "Parse and validate config text; returns (model_config, canonical_text).");

    m.def("grad_check_ops", &grad_check_ops);
    m.def(
        "grad_check",
        [](const std::string& op, uint64_t seed, int cases) {
            const GradCheckReport r = grad_check_op(op, seed, cases);
            return py::make_tuple(r.max_rel_err, r.elements);
        },
        py::arg("op"), py::arg("seed") = 42, py::arg("cases") = 5);

    m.attr("GRAD_CHECK_TOLERANCE") = kGradCheckTolerance;
    m.attr("PARAM_BUDGET") = int64_t(5000000);
}
