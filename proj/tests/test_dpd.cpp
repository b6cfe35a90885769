#include <cmath>
#include <random>

#include "doctest.h"
#include "prfl/dpd.hpp"
#include "prfl/errors.hpp"
#include "prfl/svd.hpp"

using namespace prfl;

namespace {

Tensor random_tensor(std::vector<std::size_t> dims, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(dims));
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : t.data) v = dist(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.dims == b.dims);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Re-derives the minimal K satisfying the cumulative variance threshold.
std::size_t oracle_k_star(const std::vector<double>& s, double alpha) {
  double total = 0.0;
  for (double v : s) total += v * v;
  if (total == 0.0) return 1;
  double cum = 0.0;
  for (std::size_t k = 1; k <= s.size(); ++k) {
    cum += s[k - 1] * s[k - 1];
    if (cum / total > alpha) return k;
  }
  return s.size();
}

}  // namespace

TEST_CASE("reshape_to_matrix conventions") {
  std::mt19937_64 rng(1);
  const Tensor m2 = random_tensor({5, 7}, rng);
  auto [r2, d2] = reshape_to_matrix(m2);
  CHECK(r2.dims == m2.dims);
  CHECK(d2 == m2.dims);

  const Tensor m4 = random_tensor({8, 3, 3, 3}, rng);
  auto [r4, d4] = reshape_to_matrix(m4);
  CHECK(r4.dims == std::vector<std::size_t>{8, 27});
  CHECK(d4 == m4.dims);
  CHECK(r4.data == m4.data);

  const Tensor m1 = random_tensor({9}, rng);
  auto [r1, d1] = reshape_to_matrix(m1);
  CHECK(r1.dims == std::vector<std::size_t>{1, 9});
  CHECK(d1 == std::vector<std::size_t>{9});
}

TEST_CASE("split_rank ratio rule") {
  CHECK(split_rank(256, 64) == 4);
  CHECK(split_rank(64, 256) == 4);
  CHECK(split_rank(32, 72) == 2);
  CHECK(split_rank(10, 10) == 1);
  CHECK(split_rank(1000, 2) == 2);  // clamped to min(P,Q)
  CHECK(split_rank(7, 3) == 2);
  CHECK(split_rank(1, 5) == 1);
}

TEST_CASE("factor_split reconstructs the best rank-r approximation") {
  std::mt19937_64 rng(2);
  const Tensor m = random_tensor({24, 6}, rng);
  auto [g_p, g_n] = factor_split(m);
  CHECK(g_p.dims == std::vector<std::size_t>{24, 4});
  CHECK(g_n.dims == std::vector<std::size_t>{4, 6});
  const Tensor rec = matmul(g_p, g_n);
  const SvdResult f = svd(m);
  const Tensor best = svd_reconstruct(f, 4);
  CHECK(max_abs_diff(rec, best) < 1e-10);
}

TEST_CASE("select_k: worked spectrum and boundary cases") {
  DpdConfig cfg;
  cfg.mode = DpdMode::variance_only;
  cfg.alpha = 0.98;
  // energies 100, 1, 0.01 of total 101.01; first ratio 0.990 > 0.98
  CHECK(select_k({10.0, 1.0, 0.1}, cfg) == 1);
  CHECK(select_k({0.0, 0.0, 0.0}, cfg) == 1);  // all-zero spectrum
  cfg.alpha = 1.0;  // unreachable threshold -> full length
  CHECK(select_k({3.0, 2.0, 1.0}, cfg) == 3);
  CHECK_THROWS_AS(select_k({}, cfg), InputError);
}

TEST_CASE("select_k: minimality over random spectra at several alphas") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> len_d(1, 12);
  std::uniform_real_distribution<double> val(0.0, 5.0);
  for (double alpha : {0.9, 0.98, 0.99}) {
    DpdConfig cfg;
    cfg.mode = DpdMode::variance_only;
    cfg.alpha = alpha;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> s(len_d(rng));
      for (double& v : s) v = val(rng);
      std::sort(s.rbegin(), s.rend());
      const std::size_t k = select_k(s, cfg);
      CHECK(k == oracle_k_star(s, alpha));
    }
  }
}

TEST_CASE("select_k: aic_variance never drops below the variance floor") {
  std::mt19937_64 rng(4);
  DpdConfig cfg;
  cfg.mode = DpdMode::aic_variance;
  cfg.alpha = 0.9;
  cfg.aic_window = 3;
  std::uniform_real_distribution<double> lik(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(8);
    std::uniform_real_distribution<double> val(0.0, 5.0);
    for (double& v : s) v = val(rng);
    std::sort(s.rbegin(), s.rend());
    std::vector<double> noise(9);
    for (double& v : noise) v = lik(rng);
    const std::size_t k_star = oracle_k_star(s, cfg.alpha);
    const std::size_t k = select_k(s, cfg, [&](std::size_t kk) { return noise[kk]; });
    CHECK(k >= k_star);
    CHECK(k <= std::min<std::size_t>(k_star + cfg.aic_window, s.size()));
  }
}

TEST_CASE("aic_value formula") {
  CHECK(aic_value(3, -10.0) == doctest::Approx(6.0 + 20.0));
}

TEST_CASE("payload accounting: 256x64 at full K transmits 1320 floats") {
  std::mt19937_64 rng(5);
  ParamDelta delta;
  delta["head.w"] = random_tensor({256, 64}, rng);
  DpdConfig cfg;
  cfg.mode = DpdMode::variance_only;
  cfg.alpha = 1.0;  // unreachable -> full K on both factors
  const CompressedUpdate cu = compress_update(delta, cfg);
  REQUIRE(cu.matrices.size() == 1);
  CHECK(cu.matrices[0].kind == CompressedMatrix::Kind::lowrank);
  CHECK(cu.matrices[0].r == 4);
  CHECK(cu.matrices[0].k_p() == 4);
  CHECK(cu.matrices[0].k_n() == 4);
  CHECK(cu.uploaded_float_count == 1320);
  CHECK(cu.full_float_count == 16384);
}

TEST_CASE("raw fallbacks: mode, size threshold, degenerate shapes") {
  std::mt19937_64 rng(6);
  DpdConfig cfg;
  cfg.mode = DpdMode::variance_only;

  ParamDelta delta;
  delta["a"] = random_tensor({64, 64}, rng);   // compressible
  delta["b"] = random_tensor({10, 10}, rng);   // below min_compress_elems
  delta["c"] = random_tensor({4096}, rng);     // 1-D -> P=1 -> raw
  const CompressedUpdate cu = compress_update(delta, cfg);
  REQUIRE(cu.matrices.size() == 3);
  for (const auto& cm : cu.matrices) {
    if (cm.name == "b" || cm.name == "c") CHECK(cm.kind == CompressedMatrix::Kind::raw);
  }

  cfg.mode = DpdMode::full;
  const CompressedUpdate full = compress_update(delta, cfg);
  for (const auto& cm : full.matrices) CHECK(cm.kind == CompressedMatrix::Kind::raw);
  CHECK(full.uploaded_float_count == full.full_float_count);
}

TEST_CASE("aic_variance without an evaluator is a compression error") {
  std::mt19937_64 rng(7);
  ParamDelta delta;
  delta["w"] = random_tensor({64, 64}, rng);
  DpdConfig cfg;
  cfg.mode = DpdMode::aic_variance;
  CHECK_THROWS_AS(compress_update(delta, cfg), CompressionError);
}

TEST_CASE("compress/decompress: full-K round trip recovers the rank-r split") {
  std::mt19937_64 rng(8);
  ParamDelta delta;
  delta["w"] = random_tensor({64, 16}, rng);  // r = 4
  DpdConfig cfg;
  cfg.mode = DpdMode::variance_only;
  cfg.alpha = 1.0;  // full K on both factors: the factor SVDs are exact
  const CompressedUpdate cu = compress_update(delta, cfg);
  const ParamDelta back = decompress_update(cu);
  // The channel's information ceiling is the rank-r split itself, so the
  // reconstruction must match the best rank-4 approximation, not the input.
  const Tensor best = svd_reconstruct(svd(delta.at("w")), 4);
  CHECK(max_abs_diff(back.at("w"), best) < 1e-9);

  // A matrix of true rank <= r survives the whole channel unchanged.
  const Tensor a = random_tensor({64, 4}, rng);
  const Tensor b = random_tensor({4, 16}, rng);
  ParamDelta exact;
  exact["w"] = matmul(a, b);
  const ParamDelta back2 = decompress_update(compress_update(exact, cfg));
  CHECK(max_abs_diff(back2.at("w"), exact.at("w")) < 1e-9);
}

TEST_CASE("decompress restores original tensor shapes") {
  std::mt19937_64 rng(9);
  ParamDelta delta;
  delta["conv.w"] = random_tensor({32, 8, 3, 3}, rng);
  DpdConfig cfg;
  cfg.mode = DpdMode::variance_only;
  cfg.alpha = 0.9;
  const CompressedUpdate cu = compress_update(delta, cfg);
  const ParamDelta back = decompress_update(cu);
  CHECK(back.at("conv.w").dims == std::vector<std::size_t>{32, 8, 3, 3});
}

TEST_CASE("codec: encode/decode round trip is exact at 32-bit precision") {
  std::mt19937_64 rng(10);
  DpdConfig low;
  low.mode = DpdMode::variance_only;
  low.alpha = 0.95;
  low.min_compress_elems = 64;
  DpdConfig full;
  full.mode = DpdMode::full;
  std::uniform_int_distribution<std::size_t> p_d(2, 40), q_d(2, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    ParamDelta delta;
    delta["m"] = random_tensor({p_d(rng), q_d(rng)}, rng);
    delta["v"] = random_tensor({p_d(rng)}, rng);
    CompressedUpdate cu = compress_update(delta, trial % 2 ? low : full);
    cu.client_id = static_cast<std::uint32_t>(trial);
    cu.sample_count = static_cast<std::uint64_t>(trial) * 977;
    const std::vector<std::uint8_t> bytes = encode(cu);
    const CompressedUpdate back = decode(bytes);
    CHECK(back.client_id == cu.client_id);
    CHECK(back.sample_count == cu.sample_count);
    CHECK(back.uploaded_float_count == cu.uploaded_float_count);
    CHECK(back.full_float_count == cu.full_float_count);
    // Values already at f32 precision re-encode to identical bytes.
    CHECK(encode(back) == bytes);
  }
}

TEST_CASE("codec: typed decode failures") {
  std::mt19937_64 rng(11);
  ParamDelta delta;
  delta["w"] = random_tensor({8, 8}, rng);
  DpdConfig cfg;
  cfg.mode = DpdMode::full;
  std::vector<std::uint8_t> bytes = encode(compress_update(delta, cfg));

  auto expect_kind = [](const std::vector<std::uint8_t>& b, DecodeError::Kind want) {
    try {
      decode(b);
      FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
      CHECK(e.kind == want);
    }
  };

  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  expect_kind(bad, DecodeError::Kind::BadMagic);

  bad = bytes;
  bad[4] = 0xFF;
  expect_kind(bad, DecodeError::Kind::BadVersion);

  bad = bytes;
  bad[bytes.size() / 2] ^= 0x01;
  expect_kind(bad, DecodeError::Kind::CrcMismatch);

  bad.assign(bytes.begin(), bytes.end() - 9);
  try {
    decode(bad);
    FAIL("expected DecodeError");
  } catch (const DecodeError&) {
    // truncation is reported as Truncated or CrcMismatch depending on cut
  }

  CHECK_THROWS_AS(decode(std::vector<std::uint8_t>{}), DecodeError);
}

TEST_CASE("codec: random byte strings never crash the decoder") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> len_d(0, 4096);
  std::uniform_int_distribution<int> byte_d(0, 255);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::uint8_t> junk(len_d(rng));
    for (auto& b : junk) b = static_cast<std::uint8_t>(byte_d(rng));
    CHECK_THROWS_AS(decode(junk), DecodeError);
  }
}
