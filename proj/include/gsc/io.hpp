#ifndef GSC_IO_HPP
#define GSC_IO_HPP

#include <bit>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/metrics.hpp"
#include "gsc/numcore.hpp"
#include "gsc/scoring.hpp"
#include "gsc/synth.hpp"

namespace gsc {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr int manifest_format_version = 1;

/// Shortest round-trip decimal form, identical on every run.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::nan("");
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::malformed_manifest, "cannot parse number '" + std::string(s) + "'");
  }
  return x;
}

// ---------------------------------------------------------------------------
// f32 little-endian blobs

inline void write_f32le(const fs::path& path, std::span<const double> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::missing_file, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Reads exactly `count` floats, widened to double.
inline std::vector<double> read_f32le(const fs::path& path, std::size_t count) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw Error(ErrorCode::missing_file, "missing blob " + path.string());
  const auto size = fs::file_size(path, ec);
  if (ec || size != count * 4) {
    throw Error(ErrorCode::length_mismatch, path.filename().string() + ": expected " + std::to_string(count * 4) +
                                                " bytes, found " + std::to_string(size));
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes(count * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw Error(ErrorCode::non_finite, path.filename().string() + ": non-finite value");
    out[i] = static_cast<double>(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset container: manifest.json + raw blobs

enum class SetLabel { id, ood, calibration };

constexpr std::string_view to_string(SetLabel l) {
  switch (l) {
    case SetLabel::id: return "ID";
    case SetLabel::ood: return "OOD";
    case SetLabel::calibration: return "calibration";
  }
  return "ID";
}

inline SetLabel parse_set_label(std::string_view s) {
  if (s == "ID") return SetLabel::id;
  if (s == "OOD") return SetLabel::ood;
  if (s == "calibration") return SetLabel::calibration;
  throw Error(ErrorCode::malformed_manifest, "unknown feature-set label '" + std::string(s) + "'");
}

struct FeatureSet {
  std::string name;
  SetLabel label = SetLabel::id;
  std::vector<Vector> features;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

struct Dataset {
  HeadModel head;
  std::vector<FeatureSet> sets;

  std::size_t d() const { return head.input_dim(); }
  std::size_t num_classes() const { return head.output_dim(); }

  const FeatureSet* find(SetLabel label) const {
    for (const auto& s : sets) {
      if (s.label == label) return &s;
    }
    return nullptr;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset to_dataset(const SynthDataset& ds) {
  Dataset out;
  out.head = ds.head;
  out.sets.push_back({"id", SetLabel::id, ds.id_features});
  out.sets.push_back({"ood", SetLabel::ood, ds.ood_features});
  if (!ds.calibration_features.empty()) out.sets.push_back({"calibration", SetLabel::calibration, ds.calibration_features});
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::missing_file, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, "cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Writes manifest.json and one blob per weight, bias and feature set.
/// Values are stored as f32, so anything not already f32-representable is rounded.
inline fs::path save_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  ojson m;
  m["format_version"] = manifest_format_version;
  m["d"] = data.d();
  m["K"] = data.num_classes();
  m["dtype"] = "f32le";
  m["head"] = ojson::array();
  const auto& layers = data.head.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string wname = "head_" + std::to_string(l) + "_weight.f32";
    const std::string bname = "head_" + std::to_string(l) + "_bias.f32";
    write_f32le(dir / wname, layers[l].weight.values());
    write_f32le(dir / bname, layers[l].bias.values());
    ojson entry;
    entry["weight"] = wname;
    entry["bias"] = bname;
    entry["in"] = layers[l].weight.cols();
    entry["out"] = layers[l].weight.rows();
    entry["activation"] = std::string(to_string(layers[l].activation));
    m["head"].push_back(entry);
  }
  m["feature_sets"] = ojson::array();
  for (const auto& set : data.sets) {
    const std::string fname = set.name + ".f32";
    std::vector<double> flat;
    flat.reserve(set.features.size() * data.d());
    for (const auto& f : set.features) {
      if (f.size() != data.d()) throw Error(ErrorCode::dim_mismatch, "feature set " + set.name + " has wrong length");
      flat.insert(flat.end(), f.begin(), f.end());
    }
    write_f32le(dir / fname, flat);
    ojson entry;
    entry["name"] = set.name;
    entry["count"] = set.features.size();
    entry["file"] = fname;
    entry["label"] = std::string(to_string(set.label));
    m["feature_sets"].push_back(entry);
  }
  const fs::path manifest = dir / "manifest.json";
  write_text(manifest, m.dump(2) + "\n");
  return manifest;
}

namespace detail {

template <typename T>
T manifest_field(const ojson& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::malformed_manifest, std::string("manifest is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::malformed_manifest, std::string("manifest field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline Dataset load_dataset(const fs::path& manifest_path) {
  std::error_code ec;
  if (!fs::is_regular_file(manifest_path, ec)) {
    throw Error(ErrorCode::missing_file, "missing manifest " + manifest_path.string());
  }
  ojson m;
  try {
    m = ojson::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_manifest, manifest_path.string() + ": " + e.what());
  }
  const fs::path dir = manifest_path.parent_path();

  const int version = detail::manifest_field<int>(m, "format_version");
  if (version != manifest_format_version) {
    throw Error(ErrorCode::version_mismatch, "manifest format_version " + std::to_string(version) + " (expected " +
                                                 std::to_string(manifest_format_version) + ")");
  }
  const auto dtype = detail::manifest_field<std::string>(m, "dtype");
  if (dtype != "f32le") throw Error(ErrorCode::malformed_manifest, "unsupported dtype " + dtype);
  const auto d = detail::manifest_field<std::size_t>(m, "d");
  const auto k = detail::manifest_field<std::size_t>(m, "K");

  std::vector<LayerSpec> layers;
  const auto head = detail::manifest_field<ojson>(m, "head");
  std::size_t expected_in = d;
  for (std::size_t l = 0; l < head.size(); ++l) {
    const auto& e = head[l];
    const auto in = detail::manifest_field<std::size_t>(e, "in");
    const auto out = detail::manifest_field<std::size_t>(e, "out");
    if (in != expected_in) {
      throw Error(ErrorCode::dim_mismatch, "head layer " + std::to_string(l) + " expects input " + std::to_string(in) +
                                               " but receives " + std::to_string(expected_in) +
                                               (l == 0 ? " (manifest d)" : ""));
    }
    const Activation act = parse_activation(detail::manifest_field<std::string>(e, "activation"));
    auto w = read_f32le(dir / detail::manifest_field<std::string>(e, "weight"), in * out);
    auto b = read_f32le(dir / detail::manifest_field<std::string>(e, "bias"), out);
    layers.push_back({Matrix(out, in, std::move(w)), Vector(std::move(b)), act});
    expected_in = out;
  }
  if (layers.empty()) throw Error(ErrorCode::malformed_manifest, "manifest head has no layers");
  if (expected_in != k) {
    throw Error(ErrorCode::dim_mismatch, "head emits " + std::to_string(expected_in) + " logits but manifest K is " +
                                             std::to_string(k));
  }
  Dataset data;
  try {
    data.head = HeadModel(std::move(layers));
  } catch (const Error& e) {
    throw Error(ErrorCode::dim_mismatch, e.what());
  }

  for (const auto& e : detail::manifest_field<ojson>(m, "feature_sets")) {
    FeatureSet set;
    set.name = detail::manifest_field<std::string>(e, "name");
    set.label = parse_set_label(detail::manifest_field<std::string>(e, "label"));
    const auto count = detail::manifest_field<std::size_t>(e, "count");
    const auto flat = read_f32le(dir / detail::manifest_field<std::string>(e, "file"), count * d);
    set.features.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      set.features.emplace_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(i * d),
                                                    flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
    }
    data.sets.push_back(std::move(set));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Synthetic config JSON

inline ojson to_json(const SynthConfig& c) {
  ojson j;
  j["d"] = c.d;
  j["K"] = c.num_classes;
  j["M"] = c.support;
  j["s"] = c.spikes;
  j["spike_gain"] = c.spike_gain ? ojson(*c.spike_gain) : ojson(nullptr);
  j["noise_sigma"] = c.noise_sigma;
  j["n_id"] = c.n_id;
  j["n_ood"] = c.n_ood;
  j["n_calibration"] = c.n_calibration;
  j["seed"] = c.seed;
  j["head"] = std::string(to_string(c.head));
  j["tanh_scale"] = c.tanh_scale;
  j["gate_threshold"] = c.gate_threshold;
  return j;
}

inline SynthConfig synth_config_from_json(const ojson& j) {
  SynthConfig c;
  try {
    if (j.contains("d")) c.d = j.at("d").get<std::size_t>();
    if (j.contains("K")) c.num_classes = j.at("K").get<std::size_t>();
    if (j.contains("M")) c.support = j.at("M").get<std::size_t>();
    if (j.contains("s")) c.spikes = j.at("s").get<std::size_t>();
    if (j.contains("spike_gain") && !j.at("spike_gain").is_null()) c.spike_gain = j.at("spike_gain").get<double>();
    if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("n_id")) c.n_id = j.at("n_id").get<std::size_t>();
    if (j.contains("n_ood")) c.n_ood = j.at("n_ood").get<std::size_t>();
    if (j.contains("n_calibration")) c.n_calibration = j.at("n_calibration").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("head")) c.head = parse_synth_head(j.at("head").get<std::string>());
    if (j.contains("tanh_scale")) c.tanh_scale = j.at("tanh_scale").get<double>();
    if (j.contains("gate_threshold")) c.gate_threshold = j.at("gate_threshold").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Tables

inline ojson to_json(const Threshold& t) {
  ojson j;
  j["tau"] = t.tau;
  j["target_tpr"] = t.target_tpr;
  j["n"] = t.calibration_size;
  j["tie_count"] = t.tie_count;
  j["degenerate"] = t.degenerate;
  return j;
}

inline Threshold threshold_from_json(const ojson& j) {
  Threshold t;
  t.tau = j.at("tau").get<double>();
  t.target_tpr = j.at("target_tpr").get<double>();
  t.calibration_size = j.at("n").get<std::size_t>();
  t.tie_count = j.at("tie_count").get<std::size_t>();
  t.degenerate = j.at("degenerate").get<bool>();
  return t;
}

inline std::string histogram_csv(const HistogramTable& h) {
  std::string out = "bin_lo,bin_hi,id_count,ood_count\n";
  for (std::size_t b = 0; b < h.bin_lo.size(); ++b) {
    out += format_double(h.bin_lo[b]) + "," + format_double(h.bin_hi[b]) + "," + std::to_string(h.id_count[b]) +
           "," + std::to_string(h.ood_count[b]) + "\n";
  }
  return out;
}

inline std::string concentration_csv(const ConcentrationProfile& id, const ConcentrationProfile& ood) {
  std::string out = "k,mean_id,std_id,mean_ood,std_ood,excluded\n";
  const std::size_t excluded = id.excluded + ood.excluded;
  for (std::size_t j = 0; j < id.k_values.size(); ++j) {
    out += std::to_string(id.k_values[j]) + "," + format_double(id.mean_ratio[j]) + "," +
           format_double(id.std_ratio[j]) + "," + format_double(ood.mean_ratio[j]) + "," +
           format_double(ood.std_ratio[j]) + "," + std::to_string(excluded) + "\n";
  }
  return out;
}

/// Splits one CSV line on commas (the engine never writes quoted fields).
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace gsc

#endif  // GSC_IO_HPP
