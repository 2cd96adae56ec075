#include "voxelenc/io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <nlohmann/json.hpp>

#include "voxelenc/error.hpp"

namespace voxelenc::io {

namespace {

using json = nlohmann::json;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_matrix(const DenseMatrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(kVemHeaderSize + m.size() * dtype_size(m.dtype()));
  out.insert(out.end(), {'V', 'E', 'M', '1'});
  out.push_back(static_cast<std::uint8_t>(m.dtype()));
  out.push_back(2);
  out.push_back(0);
  out.push_back(0);
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  if (m.dtype() == Dtype::F64) {
    for (double v : m.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  } else {
    for (double v : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

DenseMatrix decode_matrix(const std::vector<std::uint8_t>& bytes, const ReadOptions& opts,
                          const std::string& origin) {
  if (bytes.size() < kVemHeaderSize) {
    throw FormatError(origin + ": file shorter than the VEM1 header");
  }
  if (bytes[0] != 'V' || bytes[1] != 'E' || bytes[2] != 'M' || bytes[3] != '1') {
    throw FormatError(origin + ": bad magic (expected VEM1)");
  }
  if (bytes[4] > 1) {
    throw FormatError(origin + ": unknown dtype code " + std::to_string(bytes[4]));
  }
  const auto dtype = static_cast<Dtype>(bytes[4]);
  if (bytes[5] != 2) throw FormatError(origin + ": rank must be 2");
  if (bytes[6] != 0 || bytes[7] != 0) throw FormatError(origin + ": reserved bytes not zero");
  const std::uint64_t rows = get_u64(bytes.data() + 8);
  const std::uint64_t cols = get_u64(bytes.data() + 16);
  const std::size_t elem = dtype_size(dtype);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / elem;
  if (cols != 0 && rows > limit / cols) {
    throw FormatError(origin + ": header dimensions overflow (" + std::to_string(rows) + "x" +
                      std::to_string(cols) + ")");
  }
  const std::uint64_t payload = rows * cols * elem;
  const std::uint64_t available = bytes.size() - kVemHeaderSize;
  if (payload > available) {
    throw CorruptionError(origin + ": truncated payload, expected " + std::to_string(payload) +
                          " bytes, found " + std::to_string(available));
  }
  if (payload < available) {
    throw FormatError(origin + ": " + std::to_string(available - payload) +
                      " trailing bytes after payload");
  }

  std::vector<double> data(rows * cols);
  const std::uint8_t* p = bytes.data() + kVemHeaderSize;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (dtype == Dtype::F64) {
      data[i] = std::bit_cast<double>(get_u64(p + i * 8));
    } else {
      data[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + i * 4)));
    }
    if (!opts.allow_nonfinite && !std::isfinite(data[i])) {
      throw ValidationError(origin + ": non-finite value at index " + std::to_string(i) +
                            " (row " + std::to_string(i / cols) + ", col " +
                            std::to_string(i % cols) + ")");
    }
  }
  DenseMatrix m(rows, cols, std::move(data), Dtype::F64);
  // Values already hold single precision; retag without rounding again.
  if (dtype == Dtype::F32) m.set_dtype(Dtype::F32);
  return m;
}

void write_matrix(const DenseMatrix& m, const std::filesystem::path& path) {
  const auto bytes = encode_matrix(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

DenseMatrix read_matrix(const std::filesystem::path& path, const ReadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_matrix(bytes, opts, path.string());
}

std::vector<double> read_vector(const std::filesystem::path& path, const ReadOptions& opts) {
  DenseMatrix m = read_matrix(path, opts);
  if (m.rows() != 1 && m.cols() != 1 && m.size() != 0) {
    throw ShapeError(path.string() + ": expected a vector, found " + m.shape_string());
  }
  return {m.data().begin(), m.data().end()};
}

void StimulusTrack::validate() const {
  if (dim == 0) throw ValidationError("stimulus track " + run_id + ": dim must be >= 1");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (!std::isfinite(e.onset_s) || e.onset_s < 0.0) {
      throw ValidationError("stimulus track " + run_id + ": event " + std::to_string(i) +
                            " has negative or non-finite onset");
    }
    if (!std::isfinite(e.duration_s) || e.duration_s < 0.0) {
      throw ValidationError("stimulus track " + run_id + ": event " + std::to_string(i) +
                            " has negative or non-finite duration");
    }
    if (i > 0 && e.onset_s < events[i - 1].onset_s) {
      throw ValidationError("stimulus track " + run_id + ": onsets not sorted at event " +
                            std::to_string(i));
    }
    if (e.vector.size() != dim) {
      throw ValidationError("stimulus track " + run_id + ": event " + std::to_string(i) +
                            " vector length " + std::to_string(e.vector.size()) +
                            " != dim " + std::to_string(dim));
    }
  }
}

StimulusTrack load_stimulus_track(const std::filesystem::path& json_path) {
  const json meta = read_json_file(json_path);
  StimulusTrack track;
  std::filesystem::path vectors_path = json_path;
  vectors_path.replace_extension(".vem");
  try {
    track.dim = meta.at("dim").get<std::size_t>();
    track.run_id = meta.at("run_id").get<std::string>();
    if (meta.contains("vectors")) {
      vectors_path = json_path.parent_path() / meta.at("vectors").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  const DenseMatrix vectors = read_matrix(vectors_path);
  if (vectors.cols() != track.dim) {
    throw ShapeError(vectors_path.string() + ": has " + std::to_string(vectors.cols()) +
                     " columns, track dim is " + std::to_string(track.dim));
  }
  if (!meta.contains("events") || !meta.at("events").is_array()) {
    throw FormatError(json_path.string() + ": missing \"events\" array");
  }
  const json& events = meta.at("events");
  track.events.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const json& ev = events[i];
    StimulusEvent e;
    std::int64_t row = 0;
    try {
      e.onset_s = ev.at("onset_s").get<double>();
      e.duration_s = ev.at("duration_s").get<double>();
      row = ev.at("vector_row").get<std::int64_t>();
    } catch (const json::exception& ex) {
      throw FormatError(json_path.string() + ": event " + std::to_string(i) + ": " + ex.what());
    }
    if (row < 0 || static_cast<std::uint64_t>(row) >= vectors.rows()) {
      throw IndexError(json_path.string() + ": event " + std::to_string(i) + " vector_row " +
                       std::to_string(row) + " out of range [0, " +
                       std::to_string(vectors.rows()) + ")");
    }
    const auto src = vectors.row(static_cast<std::size_t>(row));
    e.vector.assign(src.size(), 0.0F);
    for (std::size_t d = 0; d < src.size(); ++d) e.vector[d] = static_cast<float>(src[d]);
    track.events.push_back(std::move(e));
  }
  track.validate();
  return track;
}

void save_stimulus_track(const StimulusTrack& track, const std::filesystem::path& json_path) {
  track.validate();
  std::filesystem::path vectors_path = json_path;
  vectors_path.replace_extension(".vem");
  DenseMatrix vectors(track.events.size(), track.dim, Dtype::F32);
  json events = json::array();
  for (std::size_t i = 0; i < track.events.size(); ++i) {
    const auto& e = track.events[i];
    for (std::size_t d = 0; d < track.dim; ++d) vectors(i, d) = e.vector[d];
    events.push_back({{"onset_s", e.onset_s}, {"duration_s", e.duration_s}, {"vector_row", i}});
  }
  json meta = {{"dim", track.dim},
               {"run_id", track.run_id},
               {"vectors", vectors_path.filename().string()},
               {"events", std::move(events)}};
  write_matrix(vectors, vectors_path);
  write_text_file(json_path, meta.dump(2) + "\n");
}

void BoldRun::validate() const {
  if (!(tr_s > 0.0) || !std::isfinite(tr_s)) {
    throw ValidationError("bold run " + subject_id + "/" + run_id + ": tr_s must be > 0");
  }
  if (signal.rows() < 2) {
    throw ValidationError("bold run " + subject_id + "/" + run_id +
                          ": needs at least 2 samples, has " + std::to_string(signal.rows()));
  }
}

BoldRun load_bold_run(const std::filesystem::path& path, double tr_s, std::string subject_id,
                      std::string run_id) {
  BoldRun run{read_matrix(path), tr_s, std::move(subject_id), std::move(run_id)};
  run.validate();
  return run;
}

void RoiAtlas::validate(std::size_t n_voxels) const {
  if (labels.size() != n_voxels) {
    throw ShapeError("atlas has " + std::to_string(labels.size()) + " labels, dataset has " +
                     std::to_string(n_voxels) + " voxels");
  }
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (!names.contains(labels[v])) {
      throw ValidationError("atlas code " + std::to_string(labels[v]) + " at voxel " +
                            std::to_string(v) + " has no name");
    }
  }
}

std::map<int, std::string> default_network_names() {
  return {{0, "language"}, {1, "default_mode"}, {2, "visual"}, {3, "dorsal_attention"}};
}

RoiAtlas load_atlas(const std::filesystem::path& path) {
  RoiAtlas atlas;
  for (double v : read_vector(path)) {
    if (v != std::floor(v) || std::abs(v) > 1e9) {
      throw FormatError(path.string() + ": atlas codes must be integers");
    }
    atlas.labels.push_back(static_cast<int>(v));
  }
  std::filesystem::path names_path = path;
  names_path.replace_extension(".json");
  if (std::filesystem::exists(names_path)) {
    const json meta = read_json_file(names_path);
    try {
      for (const auto& [key, value] : meta.at("names").items()) {
        atlas.names[std::stoi(key)] = value.get<std::string>();
      }
    } catch (const std::exception& e) {
      throw FormatError(names_path.string() + ": " + e.what());
    }
  } else {
    atlas.names = default_network_names();
  }
  atlas.validate(atlas.labels.size());
  return atlas;
}

void save_atlas(const RoiAtlas& atlas, const std::filesystem::path& path) {
  atlas.validate(atlas.labels.size());
  std::vector<double> codes(atlas.labels.begin(), atlas.labels.end());
  write_matrix(row_vector(codes), path);
  json names = json::object();
  for (const auto& [code, name] : atlas.names) names[std::to_string(code)] = name;
  std::filesystem::path names_path = path;
  names_path.replace_extension(".json");
  write_text_file(names_path, json{{"names", names}}.dump(2) + "\n");
}

}  // namespace voxelenc::io
