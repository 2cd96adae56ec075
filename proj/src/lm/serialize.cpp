#include "voxelenc/lm/serialize.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "voxelenc/error.hpp"
#include "voxelenc/parallel.hpp"

namespace voxelenc::lm {

namespace {

using nlohmann::json;

std::filesystem::path sidecar_path(const std::filesystem::path& model_path) {
  return std::filesystem::path(model_path.string() + ".json");
}

}  // namespace

std::filesystem::path prefix_path(const std::filesystem::path& model_path) {
  auto p = model_path;
  p.replace_extension(".prefix.vem");
  return p;
}

void save_model(const ModelFile& model, const std::filesystem::path& path) {
  const ModelConfig& cfg = model.params.config();
  const auto flat = model.params.flatten();
  io::write_matrix(row_vector(flat), path);

  json tensors = json::array();
  for (std::size_t i = 0; i < model.params.tensor_count(); ++i) {
    const auto& t = model.params.tensor(i);
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  json meta;
  try {
    meta = json::parse(model.meta_json);
  } catch (const json::parse_error& e) {
    throw ArgumentError(std::string("save_model: meta is not valid JSON: ") + e.what());
  }
  json side = {{"format", "voxelenc-toylm"},
               {"config",
                {{"n_layers", cfg.n_layers},
                 {"d_model", cfg.d_model},
                 {"n_heads", cfg.n_heads},
                 {"vocab", cfg.vocab},
                 {"context", cfg.context},
                 {"d_ff", cfg.d_ff}}},
               {"parameter_count", flat.size()},
               {"tensors", tensors},
               {"prefix", nullptr},
               {"meta", meta}};
  if (model.prefix && model.prefix->prefix_len > 0) {
    const auto& pb = *model.prefix;
    io::write_matrix(DenseMatrix(pb.prefix_len, pb.width, pb.data), prefix_path(path));
    side["prefix"] = {{"file", prefix_path(path).filename().string()},
                      {"prefix_len", pb.prefix_len}};
  }
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << "\n";
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw IoError("cannot open model sidecar " + sidecar_path(path).string());
  json side;
  try {
    side = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }
  if (side.value("format", "") != "voxelenc-toylm") {
    throw FormatError(sidecar_path(path).string() + ": not a toy LM sidecar");
  }
  ModelConfig cfg;
  const auto& c = side.at("config");
  cfg.n_layers = c.at("n_layers").get<std::size_t>();
  cfg.d_model = c.at("d_model").get<std::size_t>();
  cfg.n_heads = c.at("n_heads").get<std::size_t>();
  cfg.vocab = c.at("vocab").get<std::size_t>();
  cfg.context = c.at("context").get<std::size_t>();
  cfg.d_ff = c.at("d_ff").get<std::size_t>();

  ModelFile model;
  model.params = ToyLmParams(cfg);
  const DenseMatrix flat = io::read_matrix(path);
  if (flat.rows() != 1 || flat.cols() != model.params.parameter_count()) {
    throw ShapeError(path.string() + ": parameter row is " + flat.shape_string() +
                     ", config implies 1x" + std::to_string(model.params.parameter_count()));
  }
  model.params.unflatten(flat.data());
  if (side.contains("prefix") && !side.at("prefix").is_null()) {
    const auto file = path.parent_path() / side.at("prefix").at("file").get<std::string>();
    const DenseMatrix m = io::read_matrix(file);
    PrefixBank pb;
    pb.prefix_len = m.rows();
    pb.width = m.cols();
    pb.data.assign(m.data().begin(), m.data().end());
    pb.validate(cfg);
    model.prefix = std::move(pb);
  }
  model.meta_json = side.value("meta", json::object()).dump();
  return model;
}

io::StimulusTrack embed_sentences(const ToyLmParams& params, const PrefixBank* prefix,
                                  const SentenceManifest& manifest, std::size_t workers) {
  io::StimulusTrack track;
  track.run_id = manifest.run_id;
  track.dim = params.config().d_model;
  std::vector<std::vector<double>> vectors(manifest.sentences.size());
  parallel_for(
      manifest.sentences.size(),
      [&](std::size_t i) {
        vectors[i] = embed_sequence(params, prefix, manifest.sentences[i].tokens);
      },
      workers);
  for (std::size_t i = 0; i < manifest.sentences.size(); ++i) {
    io::StimulusEvent e;
    e.onset_s = manifest.sentences[i].onset_s;
    e.duration_s = manifest.sentences[i].duration_s;
    e.vector.assign(vectors[i].begin(), vectors[i].end());
    track.events.push_back(std::move(e));
  }
  track.validate();
  return track;
}

}  // namespace voxelenc::lm
