// Python view of the toolkit: numpy in, numpy out.

#include "etts/acoustic/vae.hpp"
#include "etts/adversarial/adversarial.hpp"
#include "etts/checks/checks.hpp"
#include "etts/cli/config.hpp"
#include "etts/error.hpp"
#include "etts/schedule/schedule.hpp"
#include "etts/signal/mel.hpp"
#include "etts/signal/wav.hpp"
#include "etts/vocoder/vocoder.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace etts;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a) {
    std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

Array to_array(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat64).contiguous();
    std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
    Array out(shape);
    std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(c.numel()));
    return out;
}

}  // namespace

PYBIND11_MODULE(_etts, m) {
    m.doc() = "Expressive TTS toolkit bindings";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const MissingPathError& e) {
            PyErr_SetString(PyExc_FileNotFoundError, e.what());
        }
    });

    m.def(
        "kld_closed_form",
        [](const Array& mu, const Array& log_var) {
            return to_array(acoustic::kld_closed_form({to_tensor(mu), to_tensor(log_var)}));
        },
        py::arg("mu"), py::arg("log_var"), "KL(N(mu, exp(log_var)) || N(0, I)) over the last axis");

    m.def(
        "d_hinge_loss",
        [](const Array& fake, const Array& real) {
            return adversarial::d_hinge_loss(to_tensor(fake), to_tensor(real)).item<double>();
        },
        py::arg("score_fake"), py::arg("score_real"));

    m.def(
        "mol_log_prob",
        [](const Array& x, const Array& logits, const Array& means, const Array& log_scales, std::int64_t levels) {
            vocoder::Quantization q{levels};
            vocoder::MoLParams p{to_tensor(logits), to_tensor(means), to_tensor(log_scales)};
            return to_array(vocoder::mol_log_prob(to_tensor(x), p, q.half_bin()));
        },
        py::arg("x"), py::arg("logits"), py::arg("means"), py::arg("log_scales"), py::arg("levels") = 32768,
        "discretized logistic mixture log-mass; parameters carry a trailing mixture axis");

    m.def(
        "beta_kld",
        [](std::int64_t step, std::int64_t ramp_start, std::int64_t ramp_end, std::int64_t period) {
            schedule::AnnealSpec spec;
            spec.ramp_start = ramp_start;
            spec.ramp_end = ramp_end;
            spec.period = period;
            return schedule::beta_kld(spec, step);
        },
        py::arg("step"), py::arg("ramp_start") = schedule::AnnealSpec{}.ramp_start,
        py::arg("ramp_end") = schedule::AnnealSpec{}.ramp_end, py::arg("period") = schedule::AnnealSpec{}.period);

    m.def(
        "ops_at_step",
        [](std::int64_t step) {
            auto a = schedule::ops_at_step(schedule::PhasePlan::default_plan(), step);
            return py::dict(py::arg("name") = a.name, py::arg("ops") = a.ops, py::arg("gan") = a.gan_enabled);
        },
        py::arg("step"), "phase of the default plan at a training step");

    m.def(
        "log_mel",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& samples, int n_mels) {
            signal::MelConfig cfg;
            cfg.n_mels = n_mels;
            signal::Waveform w{std::vector<float>(samples.data(), samples.data() + samples.size()), cfg.sample_rate};
            return to_array(signal::wav_to_mel(w, cfg).frames);
        },
        py::arg("samples"), py::arg("n_mels") = 80, "log-mel frames (M, n_mels) of 16 kHz audio");

    m.def(
        "load_wav",
        [](const std::string& path) {
            auto w = signal::load_wav(path);
            py::array_t<float> out(static_cast<py::ssize_t>(w.samples.size()));
            std::copy(w.samples.begin(), w.samples.end(), out.mutable_data());
            return py::make_tuple(out, w.sample_rate);
        },
        py::arg("path"));

    m.def(
        "save_wav",
        [](const std::string& path, const py::array_t<float, py::array::c_style | py::array::forcecast>& samples,
           int sample_rate) {
            signal::save_wav(path, {std::vector<float>(samples.data(), samples.data() + samples.size()), sample_rate});
        },
        py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000);

    m.def(
        "load_config",
        [](const std::string& path, const std::vector<std::string>& overrides) {
            return cli::canonical_dump(cli::load_run_config(path, overrides));
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
        "resolved run configuration as canonical JSON text");

    m.def(
        "selfcheck",
        []() {
            py::list rows;
            for (const auto& c : checks::property_checks()) {
                auto r = checks::run_check(c);
                rows.append(py::make_tuple(r.name, r.passed, r.detail));
            }
            return rows;
        },
        "runs the property suite; returns (name, passed, detail) tuples");
}
