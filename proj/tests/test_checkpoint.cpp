#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "expt/checkpoint.hpp"
#include "expt/errors.hpp"
#include "expt/model.hpp"
#include "expt/train.hpp"
#include "support.hpp"

using namespace expt;
using namespace expt::checkpoint;

namespace {

model::ExPTConfig micro_config() {
  model::ExPTConfig c;
  c.d_x = 4;
  c.encoder = {2, 16, 4, 0.1, 2};
  c.vae = {2, 2, 16, 4};
  return c;
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

CheckpointErrorKind kind_of(const std::string& path) {
  try {
    read_file(path);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("expected CheckpointError");
  return CheckpointErrorKind::kMissingTensor;
}

// A model after a few optimizer steps, so the moments are non-trivial.
struct Trained {
  model::ExPTModel<float> model{micro_config(), 1};
  std::vector<nn::Tensor<float>> params = model.parameters().tensors();
  nn::OptimizerState<float> state{nn::AdamWConfig{}, params};

  Trained() {
    synthfn::GeneratorConfig g;
    g.dimension = 4;
    g.points_per_function = 10;
    g.context_size = 6;
    for (int s = 0; s < 3; ++s) {
      const auto batch = model::sample_batch(g, 2, 2, s, nullptr);
      Rng rng(s);
      model.parameters().zero_grad();
      nn::backward(model.batch_loss(batch, rng, {}));
      nn::adamw_step<float>(params, state, 1e-3);
    }
  }
};

}  // namespace

TEST_CASE("CRC-64/XZ check value") {
  const char* text = "123456789";
  CHECK(crc64(reinterpret_cast<const unsigned char*>(text), 9) == 0x995DC9BBDF1939FAull);
  CHECK(crc64(nullptr, 0) == 0);
}

TEST_CASE("records encode and decode") {
  Record r;
  r.name = "w";
  r.dtype = DType::kFloat64;
  r.dims = {2, 1};
  const double v[2] = {1.5, -2.25};
  r.data.resize(sizeof v);
  std::memcpy(r.data.data(), v, sizeof v);
  const auto bytes = encode({r});
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "EXPT");
  CHECK(bytes[4] == 1);
  const auto back = decode(bytes);
  REQUIRE(back.size() == 1);
  CHECK(back[0].name == "w");
  CHECK(back[0].dims == r.dims);
  CHECK(back[0].data == r.data);
  CHECK(back[0].element_count() == 2);
}

TEST_CASE("model round trip is bitwise") {
  testing::TempDir dir;
  const std::string path = dir.file("m.ckpt");
  Trained a;
  save(path, a.model.parameters(), &a.state, {"cafe", "expt", 3});

  model::ExPTModel<float> b(micro_config(), 99);
  auto bparams = b.parameters().tensors();
  nn::OptimizerState<float> bstate(nn::AdamWConfig{}, bparams);
  const Metadata meta = load(path, b.parameters(), &bstate);
  CHECK(meta.config_hash == "cafe");
  CHECK(meta.model_kind == "expt");
  CHECK(meta.step == 3);
  CHECK(bstate.step == 3);
  CHECK(bstate.first_moment == a.state.first_moment);
  CHECK(bstate.second_moment == a.state.second_moment);
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto x = a.params[i].values(), y = bparams[i].values();
    REQUIRE(std::memcmp(x.data(), y.data(), x.size_bytes()) == 0);
  }
  Rng data(5);
  model::ContextSet ctx;
  ctx.x = synthfn::Points::NullaryExpr(8, 4, [&] { return data.uniform(-3, 3); });
  ctx.y = synthfn::Values::NullaryExpr(8, [&] { return data.normal(); });
  Rng ra(6), rb(6);
  CHECK(a.model.generate_candidates(ctx, 2.0, 16, ra, std::nullopt) ==
        b.generate_candidates(ctx, 2.0, 16, rb, std::nullopt));

  const Metadata only = read_metadata(path);
  CHECK(only.step == 3);
  CHECK(only.model_kind == "expt");

  SUBCASE("saving the loaded model reproduces the file") {
    const std::string again = dir.file("again.ckpt");
    save(again, b.parameters(), &bstate, meta);
    CHECK(slurp(again) == slurp(path));
  }
}

TEST_CASE("corruption is reported by kind") {
  testing::TempDir dir;
  const std::string path = dir.file("m.ckpt");
  Trained a;
  save(path, a.model.parameters(), &a.state, {"cafe", "expt", 3});
  const auto good = slurp(path);

  SUBCASE("truncated") {
    spit(path, std::vector<unsigned char>(good.begin(), good.end() - 100));
    CHECK(kind_of(path) == CheckpointErrorKind::kCrcMismatch);
  }
  SUBCASE("flipped payload bit") {
    auto bad = good;
    bad[bad.size() / 2] ^= 0x10;
    spit(path, bad);
    CHECK(kind_of(path) == CheckpointErrorKind::kCrcMismatch);
  }
  SUBCASE("version 2") {
    auto bad = good;
    bad[4] = 2;
    spit(path, bad);
    CHECK(kind_of(path) == CheckpointErrorKind::kVersionMismatch);
  }
  SUBCASE("bad magic") {
    auto bad = good;
    bad[0] = 'X';
    spit(path, bad);
    CHECK(kind_of(path) == CheckpointErrorKind::kBadMagic);
  }
  SUBCASE("shorter than a header") {
    spit(path, {'E', 'X'});
    CHECK_THROWS_AS(read_file(path), CheckpointError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_file(dir.file("nope.ckpt")), IoError);
  }
}

TEST_CASE("missing tensors are named") {
  testing::TempDir dir;
  const std::string path = dir.file("partial.ckpt");
  nn::ParameterStore<float> partial;
  Rng rng(1);
  partial.uniform("pair_embedder.weight", 5, 16, 1.0, rng);
  save<float>(path, partial, nullptr, {"x", "expt", 0});
  model::ExPTModel<float> m(micro_config(), 2);
  try {
    load<float>(path, m.parameters(), nullptr);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointErrorKind::kMissingTensor);
    CHECK(std::string(e.what()).find("pair_embedder.bias") != std::string::npos);
  }
  SUBCASE("wrong shape") {
    nn::ParameterStore<float> wrong;
    wrong.uniform("pair_embedder.weight", 4, 16, 1.0, rng);
    save<float>(path, wrong, nullptr, {"x", "expt", 0});
    try {
      load<float>(path, m.parameters(), nullptr);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("pair_embedder.weight") != std::string::npos);
    }
  }
}
