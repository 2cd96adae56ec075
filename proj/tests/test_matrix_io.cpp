#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"
#include "voxelenc/error.hpp"
#include "voxelenc/io.hpp"

using namespace voxelenc;
namespace fs = std::filesystem;

TEST_CASE("encoder emits the byte layout of a hand-built VEM1 file") {
  const std::vector<double> values = {1.5, -2.0, 3.25, 0.0, 1e-300, -7.0};
  DenseMatrix m(2, 3, values);
  CHECK(io::encode_matrix(m) == oracle::vem_bytes(1, 2, 3, values));

  DenseMatrix f(3, 2, values, Dtype::F32);
  CHECK(io::encode_matrix(f) == oracle::vem_bytes(0, 3, 2, values));
  CHECK(io::encode_matrix(f).size() == io::kVemHeaderSize + 6 * 4);
}

TEST_CASE("decoder reads hand-built bytes") {
  const auto bytes = oracle::vem_bytes(1, 1, 4, {0.1, 0.2, 0.3, 0.4});
  const auto m = io::decode_matrix(bytes);
  REQUIRE(m.rows() == 1);
  REQUIRE(m.cols() == 4);
  CHECK(m(0, 2) == 0.3);
  CHECK(m.dtype() == Dtype::F64);
}

TEST_CASE("round trip is bit exact for random shapes and both dtypes") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(0, 9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = dim(rng);
    const std::size_t c = dim(rng);
    auto m = oracle::random_matrix(r, c, rng, 100.0);
    if (trial % 2 == 0) m.set_dtype(Dtype::F32);
    const auto back = io::decode_matrix(io::encode_matrix(m));
    CHECK(back == m);
  }
}

TEST_CASE("file round trip") {
  test::TempDir dir;
  std::mt19937_64 rng(3);
  const auto m = oracle::random_matrix(7, 5, rng);
  io::write_matrix(m, dir / "m.vem");
  CHECK(io::read_matrix(dir / "m.vem") == m);
}

TEST_CASE("zero-sized matrices are legal") {
  const DenseMatrix m(0, 4);
  const auto back = io::decode_matrix(io::encode_matrix(m));
  CHECK(back.rows() == 0);
  CHECK(back.cols() == 4);
}

TEST_CASE("malformed containers are rejected with the right error") {
  auto good = oracle::vem_bytes(1, 2, 2, {1, 2, 3, 4});

  SUBCASE("short header") {
    std::vector<std::uint8_t> b(good.begin(), good.begin() + 10);
    CHECK_THROWS_AS(io::decode_matrix(b), FormatError);
  }
  SUBCASE("bad magic") {
    good[0] = 'X';
    CHECK_THROWS_AS(io::decode_matrix(good), FormatError);
  }
  SUBCASE("unknown dtype") {
    good[4] = 7;
    CHECK_THROWS_AS(io::decode_matrix(good), FormatError);
  }
  SUBCASE("rank other than 2") {
    good[5] = 3;
    CHECK_THROWS_AS(io::decode_matrix(good), FormatError);
  }
  SUBCASE("reserved bytes set") {
    good[6] = 1;
    CHECK_THROWS_AS(io::decode_matrix(good), FormatError);
  }
  SUBCASE("truncated payload") {
    good.pop_back();
    CHECK_THROWS_AS(io::decode_matrix(good), CorruptionError);
  }
  SUBCASE("trailing bytes") {
    good.push_back(0);
    CHECK_THROWS_AS(io::decode_matrix(good), FormatError);
  }
  SUBCASE("dimensions that overflow") {
    const auto huge = oracle::vem_bytes(1, 1ULL << 62, 1ULL << 62, {});
    CHECK_THROWS_AS(io::decode_matrix(huge), FormatError);
  }
}

TEST_CASE("non-finite values are refused unless explicitly allowed") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto bytes = oracle::vem_bytes(1, 1, 2, {1.0, nan});
  CHECK_THROWS_AS(io::decode_matrix(bytes), ValidationError);
  io::ReadOptions opts;
  opts.allow_nonfinite = true;
  CHECK(std::isnan(io::decode_matrix(bytes, opts)(0, 1)));
}

TEST_CASE("every decode error is a validation error") {
  CHECK(FormatError("x").is_validation());
  CHECK(CorruptionError("x").is_validation());
  CHECK_FALSE(IoError("x").is_validation());
}

TEST_CASE("missing file is an I/O error") {
  CHECK_THROWS_AS(io::read_matrix("/nonexistent/dir/m.vem"), IoError);
}

namespace {

io::StimulusTrack sample_track() {
  io::StimulusTrack t;
  t.run_id = "run-01";
  t.dim = 3;
  t.events.push_back({0.5, 2.0, {1.0F, -1.0F, 0.25F}});
  t.events.push_back({4.0, 1.5, {0.5F, 0.0F, 2.0F}});
  t.events.push_back({4.0, 0.0, {-3.0F, 1.0F, 1.0F}});
  return t;
}

}  // namespace

TEST_CASE("stimulus track round trip through JSON and VEM1") {
  test::TempDir dir;
  const auto t = sample_track();
  io::save_stimulus_track(t, dir / "track.json");
  CHECK(fs::exists(dir / "track.vem"));
  const auto back = io::load_stimulus_track(dir / "track.json");
  CHECK(back.run_id == t.run_id);
  CHECK(back.dim == t.dim);
  REQUIRE(back.events.size() == t.events.size());
  for (std::size_t i = 0; i < t.events.size(); ++i) {
    CHECK(back.events[i].onset_s == t.events[i].onset_s);
    CHECK(back.events[i].duration_s == t.events[i].duration_s);
    CHECK(back.events[i].vector == t.events[i].vector);
  }
  const auto vectors = io::read_matrix(dir / "track.vem");
  CHECK(vectors.dtype() == Dtype::F32);
  CHECK(vectors.rows() == 3);
}

TEST_CASE("stimulus track written by hand is accepted") {
  test::TempDir dir;
  const auto bytes = oracle::vem_bytes(0, 2, 2, {1, 2, 3, 4});
  std::ofstream(dir / "vecs.vem", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream(dir / "t.json") << R"({"run_id": "r", "dim": 2, "vectors": "vecs.vem",
    "events": [{"onset_s": 0, "duration_s": 1, "vector_row": 1},
               {"onset_s": 2, "duration_s": 1, "vector_row": 0}]})";
  const auto t = io::load_stimulus_track(dir / "t.json");
  REQUIRE(t.events.size() == 2);
  CHECK(t.events[0].vector == std::vector<float>{3.0F, 4.0F});
}

TEST_CASE("stimulus track validation") {
  test::TempDir dir;
  auto t = sample_track();

  SUBCASE("unsorted onsets") {
    std::swap(t.events[0], t.events[1]);
    CHECK_THROWS_AS(t.validate(), ValidationError);
  }
  SUBCASE("negative onset") {
    t.events[0].onset_s = -1.0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
  }
  SUBCASE("wrong vector length") {
    t.events[1].vector.pop_back();
    CHECK_THROWS_AS(t.validate(), ValidationError);
  }
  SUBCASE("vector row out of range") {
    io::save_stimulus_track(t, dir / "t.json");
    std::ofstream(dir / "t.json") << R"({"run_id": "r", "dim": 3, "vectors": "t.vem",
      "events": [{"onset_s": 0, "duration_s": 1, "vector_row": 9}]})";
    CHECK_THROWS_AS(io::load_stimulus_track(dir / "t.json"), IndexError);
  }
  SUBCASE("dim disagrees with the matrix") {
    io::save_stimulus_track(t, dir / "t.json");
    std::ofstream(dir / "t.json") << R"({"run_id": "r", "dim": 4, "vectors": "t.vem", "events": []})";
    CHECK_THROWS_AS(io::load_stimulus_track(dir / "t.json"), ShapeError);
  }
  SUBCASE("missing events") {
    io::save_stimulus_track(t, dir / "t.json");
    std::ofstream(dir / "t.json") << R"({"run_id": "r", "dim": 3, "vectors": "t.vem"})";
    CHECK_THROWS_AS(io::load_stimulus_track(dir / "t.json"), FormatError);
  }
  SUBCASE("invalid JSON") {
    std::ofstream(dir / "t.json") << "{not json";
    CHECK_THROWS_AS(io::load_stimulus_track(dir / "t.json"), FormatError);
  }
}

TEST_CASE("bold runs need a positive TR") {
  test::TempDir dir;
  io::write_matrix(DenseMatrix(4, 2), dir / "b.vem");
  CHECK_THROWS_AS(io::load_bold_run(dir / "b.vem", 0.0, "sub-01", "run-01"), ValidationError);
  const auto run = io::load_bold_run(dir / "b.vem", 2.0, "sub-01", "run-01");
  CHECK(run.tr_s == 2.0);
  CHECK(run.signal.rows() == 4);
}

TEST_CASE("atlas round trip and validation") {
  test::TempDir dir;
  io::RoiAtlas atlas;
  atlas.labels = {0, 0, 1, 2, 3, 3};
  atlas.names = io::default_network_names();
  io::save_atlas(atlas, dir / "atlas.vem");
  const auto back = io::load_atlas(dir / "atlas.vem");
  CHECK(back.labels == atlas.labels);
  CHECK(back.names == atlas.names);
  CHECK_NOTHROW(back.validate(6));
  CHECK_THROWS_AS(back.validate(5), ShapeError);

  io::write_matrix(DenseMatrix(1, 2, {0.0, 0.5}), dir / "frac.vem");
  CHECK_THROWS_AS(io::load_atlas(dir / "frac.vem"), FormatError);

  atlas.labels[1] = 9;
  CHECK_THROWS_AS(atlas.validate(6), ValidationError);
}

TEST_CASE("read_vector accepts rows and columns but not matrices") {
  test::TempDir dir;
  io::write_matrix(DenseMatrix(3, 1, {1, 2, 3}), dir / "col.vem");
  io::write_matrix(DenseMatrix(1, 3, {1, 2, 3}), dir / "row.vem");
  io::write_matrix(DenseMatrix(2, 2), dir / "mat.vem");
  CHECK(io::read_vector(dir / "col.vem") == std::vector<double>{1, 2, 3});
  CHECK(io::read_vector(dir / "row.vem") == std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(io::read_vector(dir / "mat.vem"), ShapeError);
}

TEST_CASE("f32 dtype rounds stored values") {
  DenseMatrix m(1, 1, {0.1});
  m.set_dtype(Dtype::F32);
  CHECK(m(0, 0) == static_cast<double>(0.1F));
}
