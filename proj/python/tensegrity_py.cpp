#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tensegrity/errors.hpp"
#include "tensegrity/inekf.hpp"
#include "tensegrity/pipeline.hpp"

namespace py = pybind11;
using namespace tensegrity;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> matrix_array(std::size_t rows, std::size_t cols, const std::function<T(std::size_t, std::size_t)>& at) {
  py::array_t<T> out({rows, cols});
  auto view = out.template mutable_unchecked<2>();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) view(r, c) = at(r, c);
  }
  return out;
}

py::array_t<std::uint8_t> contacts_array(const std::vector<ContactVector>& c) {
  return matrix_array<std::uint8_t>(c.size(), kNumEndcaps, [&](std::size_t r, std::size_t k) { return c[r][k]; });
}

std::vector<ContactVector> contacts_from(const ByteArray& a) {
  if (a.ndim() != 2 || a.shape(1) != kNumEndcaps) throw ShapeMismatch("contacts must have shape (N, 6)");
  const auto v = a.unchecked<2>();
  std::vector<ContactVector> out(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t r = 0; r < a.shape(0); ++r) {
    for (int k = 0; k < kNumEndcaps; ++k) out[r][k] = v(r, k);
  }
  return out;
}

py::dict sequence_dict(const SensorSequence& s) {
  py::dict d;
  d["sample_rate"] = s.sample_rate;
  d["t"] = py::array_t<double>(static_cast<py::ssize_t>(s.t.size()), s.t.data());
  d["imu"] = matrix_array<double>(s.size(), kImuChannels, [&](std::size_t r, std::size_t c) { return s.imu[r][c]; });
  d["tendon_lengths"] =
      matrix_array<double>(s.size(), kNumTendons, [&](std::size_t r, std::size_t c) { return s.tendon_lengths[r][c]; });
  d["contacts"] = s.contacts ? py::object(contacts_array(*s.contacts)) : py::object(py::none());
  return d;
}

SensorSequence sequence_from(const py::dict& d) {
  SensorSequence s;
  if (d.contains("sample_rate")) s.sample_rate = d["sample_rate"].cast<double>();
  const auto t = d["t"].cast<DoubleArray>();
  const auto imu = d["imu"].cast<DoubleArray>();
  const auto tendon = d["tendon_lengths"].cast<DoubleArray>();
  if (t.ndim() != 1) throw ShapeMismatch("t must be one-dimensional");
  const auto n = static_cast<std::size_t>(t.shape(0));
  if (imu.ndim() != 2 || imu.shape(1) != kImuChannels || static_cast<std::size_t>(imu.shape(0)) != n) {
    throw ShapeMismatch("imu must have shape (N, 18)");
  }
  if (tendon.ndim() != 2 || tendon.shape(1) != kNumTendons || static_cast<std::size_t>(tendon.shape(0)) != n) {
    throw ShapeMismatch("tendon_lengths must have shape (N, 9)");
  }
  s.t.assign(t.data(), t.data() + n);
  s.imu.resize(n);
  s.tendon_lengths.resize(n);
  const auto iv = imu.unchecked<2>();
  const auto tv = tendon.unchecked<2>();
  for (std::size_t r = 0; r < n; ++r) {
    for (int c = 0; c < kImuChannels; ++c) s.imu[r][c] = iv(r, c);
    for (int c = 0; c < kNumTendons; ++c) s.tendon_lengths[r][c] = tv(r, c);
  }
  if (d.contains("contacts") && !d["contacts"].is_none()) {
    auto c = contacts_from(d["contacts"].cast<ByteArray>());
    if (c.size() != n) throw LengthMismatch("contacts and t differ in length");
    s.contacts = std::move(c);
  }
  s.validate();
  return s;
}

py::dict trajectory_dict(const GroundTruth& g) {
  py::dict d;
  const std::size_t n = g.size();
  d["t"] = py::array_t<double>(static_cast<py::ssize_t>(n), g.t.data());
  d["position"] = matrix_array<double>(n, 3, [&](std::size_t r, std::size_t c) { return g.position[r][c]; });
  d["velocity"] = matrix_array<double>(n, 3, [&](std::size_t r, std::size_t c) { return g.velocity[r][c]; });
  py::array_t<double> rot({n, std::size_t{3}, std::size_t{3}});
  auto rv = rot.mutable_unchecked<3>();
  for (std::size_t k = 0; k < n; ++k) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) rv(k, i, j) = g.rotation[k](i, j);
    }
  }
  d["rotation"] = rot;
  return d;
}

GroundTruth trajectory_from(const py::dict& d) {
  GroundTruth g;
  const auto t = d["t"].cast<DoubleArray>();
  const auto pos = d["position"].cast<DoubleArray>();
  const auto n = static_cast<std::size_t>(t.shape(0));
  if (pos.ndim() != 2 || pos.shape(1) != 3 || static_cast<std::size_t>(pos.shape(0)) != n) {
    throw ShapeMismatch("position must have shape (N, 3)");
  }
  g.t.assign(t.data(), t.data() + n);
  const auto pv = pos.unchecked<2>();
  for (std::size_t k = 0; k < n; ++k) g.position.emplace_back(pv(k, 0), pv(k, 1), pv(k, 2));
  g.velocity.assign(n, Eigen::Vector3d::Zero());
  g.rotation.assign(n, Eigen::Matrix3d::Identity());
  if (d.contains("velocity")) {
    const auto vel = d["velocity"].cast<DoubleArray>().unchecked<2>();
    for (std::size_t k = 0; k < n; ++k) g.velocity[k] = Eigen::Vector3d(vel(k, 0), vel(k, 1), vel(k, 2));
  }
  if (d.contains("rotation")) {
    const auto rot = d["rotation"].cast<DoubleArray>().unchecked<3>();
    for (std::size_t k = 0; k < n; ++k) {
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) g.rotation[k](i, j) = rot(k, i, j);
      }
    }
  }
  return g;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["windows"] = m.windows;
  d["accuracy"] = m.exact_match_accuracy;
  d["macro_f1"] = m.macro_f1;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  py::list confusion;
  for (const auto& c : m.confusion) confusion.append(py::dict(py::arg("tp") = c.tp, py::arg("fp") = c.fp,
                                                             py::arg("fn") = c.fn, py::arg("tn") = c.tn));
  d["confusion"] = confusion;
  return d;
}

std::vector<SensorSequence> sequences_from(const py::list& items) {
  std::vector<SensorSequence> out;
  for (const auto& item : items) out.push_back(sequence_from(item.cast<py::dict>()));
  return out;
}

struct Model {
  ModelParams<float> params;
  TrainConfig config;

  py::dict config_dict() const {
    nlohmann::json j = config;
    py::dict d;
    for (const auto& [k, v] : j.items()) {
      if (v.is_boolean()) d[k.c_str()] = v.get<bool>();
      else if (v.is_number_integer()) d[k.c_str()] = v.get<long long>();
      else if (v.is_number()) d[k.c_str()] = v.get<double>();
      else d[k.c_str()] = v.get<std::string>();
    }
    return d;
  }
};

}  // namespace

PYBIND11_MODULE(_tensegrity, m) {
  m.doc() = "Tensegrity contact estimation: simulation, symmetrized graph network and invariant EKF.";
  m.attr("__version__") = kToolkitVersion;

  py::register_exception<Error>(m, "TensegrityError", PyExc_RuntimeError);

  m.def(
      "simulate",
      [](const std::string& primitive, double turning_ratio, double duration, double sample_rate, std::uint64_t seed,
         double accel_noise, double gyro_noise, double tendon_noise) {
        SimConfig c;
        c.primitive = parse_primitive(primitive);
        c.turning_ratio = turning_ratio;
        c.duration = duration;
        c.sample_rate = sample_rate;
        c.seed = seed;
        c.noise = {accel_noise, gyro_noise, tendon_noise};
        SimResult r;
        {
          py::gil_scoped_release release;
          r = simulate(c);
        }
        return py::make_tuple(sequence_dict(r.sequence), trajectory_dict(r.truth));
      },
      py::arg("primitive") = "F", py::arg("turning_ratio") = 1.0, py::arg("duration") = 60.0,
      py::arg("sample_rate") = 100.0, py::arg("seed") = 0, py::arg("accel_noise") = SensorNoise{}.accel,
      py::arg("gyro_noise") = SensorNoise{}.gyro, py::arg("tendon_noise") = SensorNoise{}.tendon,
      "Simulate one rolling sequence. Returns (sequence, ground_truth) dictionaries of numpy arrays.");

  m.def("read_dataset", [](const std::filesystem::path& p) { return sequence_dict(read_dataset(p)); },
        py::arg("path"));
  m.def("write_dataset", [](const std::filesystem::path& p, const py::dict& s) { write_dataset(p, sequence_from(s)); },
        py::arg("path"), py::arg("sequence"));

  m.def("group_elements", []() {
    const auto topology = build_canonical_topology();
    const auto group = build_d3_group(topology);
    py::list out;
    for (const auto& g : group.elements()) {
      out.append(py::dict(py::arg("label") = to_string(g.label), py::arg("endcap_perm") = g.endcap_perm,
                          py::arg("rod_perm") = g.rod_perm, py::arg("tendon_perm") = g.tendon_perm,
                          py::arg("reverses_rods") = g.reverses_rods));
    }
    return out;
  });
  m.def("check_group", []() {
    const auto topology = build_canonical_topology();
    return check_group_axioms(build_d3_group(topology), topology);
  }, "Axiom violations of the symmetry group; empty when it is a valid D3.");

  m.def(
      "bce_with_logits",
      [](const std::array<double, kNumEndcaps>& logits, const ContactVector& labels) {
        return bce_with_logits(logits, labels);
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "compute_metrics",
      [](const ByteArray& predictions, const ByteArray& labels) {
        return metrics_dict(compute_metrics(contacts_from(predictions), contacts_from(labels)));
      },
      py::arg("predictions"), py::arg("labels"));

  py::class_<Model>(m, "Model")
      .def_static(
          "load",
          [](const std::filesystem::path& p) {
            auto ck = load_checkpoint<float>(p);
            return Model{std::move(ck.params), ck.config};
          },
          py::arg("path"))
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(self.params, self.config, p); },
           py::arg("path"))
      .def_property_readonly("config", &Model::config_dict)
      .def_property_readonly("parameter_count", [](const Model& self) { return self.params.parameter_count(); })
      .def(
          "predict",
          [](const Model& self, const py::dict& sequence, int batch_size) {
            const SensorSequence seq = sequence_from(sequence);
            ContactStream s;
            {
              py::gil_scoped_release release;
              s = predict_stream(self.params, self.config, seq, batch_size);
            }
            return py::make_tuple(contacts_array(s.contacts),
                                  py::array_t<std::uint8_t>(static_cast<py::ssize_t>(s.warmup.size()), s.warmup.data()));
          },
          py::arg("sequence"), py::arg("batch_size") = 256,
          "Per-row contacts and warmup flags; the first history-1 rows are warmup.")
      .def(
          "evaluate",
          [](const Model& self, const py::list& sequences, int stride) {
            const auto ds = make_dataset(sequences_from(sequences), self.config.history, stride);
            Metrics metrics;
            {
              py::gil_scoped_release release;
              metrics = evaluate(self.params, ds, self.config.symmetry_enabled, self.config.group_mode);
            }
            return metrics_dict(metrics);
          },
          py::arg("sequences"), py::arg("stride") = 1);

  m.def(
      "train",
      [](const py::list& sequences, double validation_fraction, int epochs, double lr, int batch_size, int layers,
         int hidden, int history, int stride, bool symmetry, const std::string& group_mode, bool augment_group,
         std::uint64_t seed) {
        TrainConfig c;
        c.epochs = epochs;
        c.learning_rate = lr;
        c.batch_size = batch_size;
        c.layers = layers;
        c.hidden = hidden;
        c.history = history;
        c.stride = stride;
        c.symmetry_enabled = symmetry;
        c.group_mode = parse_group_mode(group_mode);
        c.augment_group = augment_group;
        c.seed = seed;
        c.validate();
        const auto split = chronological_split(sequences_from(sequences), validation_fraction, history, stride, stride);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(split.train, split.validation, c);
        }
        py::list log;
        for (const auto& e : r.history) {
          log.append(py::dict(py::arg("epoch") = e.epoch, py::arg("train_loss") = e.train_loss,
                              py::arg("val_accuracy") = e.val_accuracy, py::arg("val_macro_f1") = e.val_macro_f1,
                              py::arg("seconds") = e.seconds));
        }
        return py::make_tuple(Model{std::move(r.params), c}, log);
      },
      py::arg("sequences"), py::arg("validation_fraction") = 0.2, py::arg("epochs") = TrainConfig{}.epochs,
      py::arg("lr") = TrainConfig{}.learning_rate, py::arg("batch_size") = TrainConfig{}.batch_size,
      py::arg("layers") = TrainConfig{}.layers, py::arg("hidden") = TrainConfig{}.hidden,
      py::arg("history") = TrainConfig{}.history, py::arg("stride") = 1, py::arg("symmetry") = true,
      py::arg("group_mode") = "index-only", py::arg("augment_group") = false, py::arg("seed") = 0,
      "Train on labeled sequences (tail of each held out for validation). Returns (model, epoch_log).");

  m.def(
      "estimate",
      [](const py::dict& sequence, const ByteArray& contacts, const py::object& truth) {
        const SensorSequence seq = sequence_from(sequence);
        const auto c = contacts_from(contacts);
        const auto topology = build_canonical_topology();
        EstimatorOptions options;
        if (!truth.is_none()) options.initial = state_from_truth(trajectory_from(truth.cast<py::dict>()));
        GroundTruth traj;
        {
          py::gil_scoped_release release;
          traj = run_estimator(seq, c, topology, options);
        }
        return trajectory_dict(traj);
      },
      py::arg("sequence"), py::arg("contacts"), py::arg("ground_truth") = py::none(),
      "Contact-aided invariant EKF. The initial state comes from ground_truth when given, otherwise from static "
      "alignment.");

  m.def(
      "drift_percent",
      [](const py::dict& estimate, const py::dict& truth) {
        return drift_percent(trajectory_from(estimate), trajectory_from(truth));
      },
      py::arg("estimate"), py::arg("ground_truth"));
}
