#include "prfl/dpd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prfl/errors.hpp"
#include "prfl/svd.hpp"
#include "prfl/wire.hpp"

namespace prfl {

void DpdConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("dpd: alpha must be in (0, 1]");
}

std::size_t CompressedMatrix::payload_floats() const {
  if (kind == Kind::raw) return product(orig_dims);
  return p * k_p() + k_p() + k_p() * r + r * k_n() + k_n() + k_n() * q;
}

std::pair<Tensor, std::vector<std::size_t>> reshape_to_matrix(const Tensor& t) {
  if (t.ndim() == 0 || t.size() == 0) throw ShapeError("reshape_to_matrix: empty tensor");
  const std::vector<std::size_t> orig = t.dims;
  if (t.ndim() == 2) return {t, orig};
  if (t.ndim() == 4)
    return {Tensor({t.dims[0], t.dims[1] * t.dims[2] * t.dims[3]}, t.data), orig};
  return {Tensor({1, t.size()}, t.data), orig};
}

std::size_t split_rank(std::size_t p, std::size_t q) {
  if (p < 1 || q < 1) throw InputError("split_rank: dims must be >= 1");
  const std::size_t hi = std::max(p, q), lo = std::min(p, q);
  return std::clamp<std::size_t>(hi / lo, 1, lo);
}

std::pair<Tensor, Tensor> factor_split(const Tensor& m) {
  if (m.ndim() != 2) throw ShapeError("factor_split expects a matrix");
  const std::size_t p = m.rows(), q = m.cols();
  const std::size_t r = split_rank(p, q);
  const SvdResult f = svd(m);
  Tensor g_p = Tensor::matrix(p, r);
  Tensor g_n = Tensor::matrix(r, q);
  for (std::size_t t = 0; t < r; ++t) {
    const double root = std::sqrt(f.s[t]);
    for (std::size_t i = 0; i < p; ++i) g_p.at(i, t) = f.u.at(i, t) * root;
    for (std::size_t j = 0; j < q; ++j) g_n.at(t, j) = root * f.vt.at(t, j);
  }
  return {std::move(g_p), std::move(g_n)};
}

std::size_t select_k(const std::vector<double>& singulars, const DpdConfig& cfg,
                     const LikelihoodFn& likelihood) {
  if (singulars.empty()) throw InputError("select_k: empty spectrum");
  cfg.validate();
  const std::size_t len = singulars.size();
  if (cfg.mode == DpdMode::full) return len;

  double total = 0.0;
  for (double s : singulars) total += s * s;
  std::size_t k_star = len;  // unreachable threshold -> full length
  if (total == 0.0) {
    k_star = 1;
  } else {
    double cum = 0.0;
    for (std::size_t k = 1; k <= len; ++k) {
      cum += singulars[k - 1] * singulars[k - 1];
      if (cum / total > cfg.alpha) {
        k_star = k;
        break;
      }
    }
  }
  if (cfg.mode == DpdMode::variance_only || !likelihood) return k_star;

  const std::size_t k_hi = std::min(k_star + cfg.aic_window, len);
  std::size_t best_k = k_star;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = k_star; k <= k_hi; ++k) {
    const double objective = static_cast<double>(k) - likelihood(k);
    if (objective < best) {
      best = objective;
      best_k = k;
    }
  }
  return best_k;
}

double aic_value(std::size_t k, double sum_log_lik) {
  return 2.0 * static_cast<double>(k) - 2.0 * sum_log_lik;
}

namespace {

Tensor truncated_product(const Tensor& u, const std::vector<double>& s, const Tensor& vt,
                         std::size_t k) {
  // u: P x m, vt: m x Q; leading k triples only.
  const std::size_t p = u.rows(), q = vt.cols();
  Tensor out = Tensor::matrix(p, q);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t i = 0; i < p; ++i) {
      const double ui = u.at(i, t) * s[t];
      if (ui == 0.0) continue;
      for (std::size_t j = 0; j < q; ++j) out.at(i, j) += ui * vt.at(t, j);
    }
  }
  return out;
}

Tensor truncate_cols(const Tensor& m, std::size_t k) {
  Tensor out = Tensor::matrix(m.rows(), k);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = m.at(i, j);
  return out;
}

Tensor truncate_rows(const Tensor& m, std::size_t k) {
  Tensor out = Tensor::matrix(k, m.cols());
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = m.at(i, j);
  return out;
}

}  // namespace

CompressedUpdate compress_update(const ParamDelta& delta, const DpdConfig& cfg,
                                 const CalibEvaluator& evaluator) {
  cfg.validate();
  CompressedUpdate update;
  for (const auto& [name, tensor] : delta) {
    require_finite(tensor, "compress_update: " + name);
    auto [mat, orig_dims] = reshape_to_matrix(tensor);
    CompressedMatrix cm;
    cm.name = name;
    cm.orig_dims = orig_dims;
    cm.p = mat.rows();
    cm.q = mat.cols();
    update.full_float_count += tensor.size();

    const bool raw = cfg.mode == DpdMode::full || tensor.size() < cfg.min_compress_elems ||
                     std::min(cm.p, cm.q) == 1;
    bool stored_lowrank = false;
    if (!raw) {
      cm.r = split_rank(cm.p, cm.q);
      auto [g_p, g_n] = factor_split(mat);
      const SvdResult f_p = svd(g_p);
      const SvdResult f_n = svd(g_n);

      LikelihoodFn lik_p, lik_n;
      if (cfg.mode == DpdMode::aic_variance) {
        if (!evaluator)
          throw CompressionError("compress_update: aic_variance mode needs an evaluator");
        auto eval_candidate = [&](const Tensor& candidate_mat) {
          ParamDelta candidate = delta;
          candidate[name] = Tensor(orig_dims, candidate_mat.data);
          return evaluator(candidate);
        };
        lik_p = [&, g_n_ = g_n](std::size_t k) {
          return eval_candidate(matmul(truncated_product(f_p.u, f_p.s, f_p.vt, k), g_n_));
        };
        lik_n = [&, g_p_ = g_p](std::size_t k) {
          return eval_candidate(matmul(g_p_, truncated_product(f_n.u, f_n.s, f_n.vt, k)));
        };
      }
      const std::size_t k_p = select_k(f_p.s, cfg, lik_p);
      const std::size_t k_n = select_k(f_n.s, cfg, lik_n);

      cm.u_p = truncate_cols(f_p.u, k_p);
      cm.s_p.assign(f_p.s.begin(), f_p.s.begin() + static_cast<std::ptrdiff_t>(k_p));
      cm.vt_p = truncate_rows(f_p.vt, k_p);
      cm.u_n = truncate_cols(f_n.u, k_n);
      cm.s_n.assign(f_n.s.begin(), f_n.s.begin() + static_cast<std::ptrdiff_t>(k_n));
      cm.vt_n = truncate_rows(f_n.vt, k_n);
      cm.kind = CompressedMatrix::Kind::lowrank;
      // Keep the low-rank form only when it actually saves floats.
      stored_lowrank = cm.payload_floats() < tensor.size();
    }
    if (!stored_lowrank) {
      cm.kind = CompressedMatrix::Kind::raw;
      cm.r = 0;
      cm.raw = tensor;
      cm.u_p = cm.vt_p = cm.u_n = cm.vt_n = Tensor();
      cm.s_p.clear();
      cm.s_n.clear();
    }
    update.uploaded_float_count += cm.payload_floats();
    update.matrices.push_back(std::move(cm));
  }
  return update;
}

ParamDelta decompress_update(const CompressedUpdate& update) {
  ParamDelta out;
  for (const auto& cm : update.matrices) {
    if (cm.kind == CompressedMatrix::Kind::raw) {
      if (cm.raw.size() != product(cm.orig_dims))
        throw ProtocolError("decompress: raw payload size mismatch for " + cm.name);
      out[cm.name] = Tensor(cm.orig_dims, cm.raw.data);
      continue;
    }
    if (cm.u_p.rows() != cm.p || cm.vt_p.cols() != cm.r || cm.u_n.rows() != cm.r ||
        cm.vt_n.cols() != cm.q || cm.p * cm.q != product(cm.orig_dims))
      throw ProtocolError("decompress: inconsistent factor dims for " + cm.name);
    Tensor g_p = truncated_product(cm.u_p, cm.s_p, cm.vt_p, cm.k_p());
    Tensor g_n = truncated_product(cm.u_n, cm.s_n, cm.vt_n, cm.k_n());
    Tensor mat = matmul(g_p, g_n);
    out[cm.name] = Tensor(cm.orig_dims, std::move(mat.data));
  }
  return out;
}

namespace {
constexpr std::uint8_t kMagic[4] = {0x50, 0x52, 0x46, 0x4C};  // "PRFL"
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kMaxElems = 1u << 28;

void write_f32s(ByteWriter& w, const std::vector<double>& v) {
  for (double x : v) w.f32(static_cast<float>(x));
}

std::vector<double> read_f32s(ByteReader& r, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = static_cast<double>(r.f32());
  return v;
}
}  // namespace

std::vector<std::uint8_t> encode(const CompressedUpdate& update) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(update.client_id);
  w.u64(update.sample_count);
  w.u32(static_cast<std::uint32_t>(update.matrices.size()));
  for (const auto& cm : update.matrices) {
    w.u16(static_cast<std::uint16_t>(cm.name.size()));
    w.bytes(cm.name.data(), cm.name.size());
    w.u8(static_cast<std::uint8_t>(cm.kind));
    w.u8(static_cast<std::uint8_t>(cm.orig_dims.size()));
    for (std::size_t d : cm.orig_dims) w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(cm.p));
    w.u32(static_cast<std::uint32_t>(cm.q));
    if (cm.kind == CompressedMatrix::Kind::raw) {
      w.u32(0);
      w.u32(0);
      w.u32(0);
      write_f32s(w, cm.raw.data);
    } else {
      w.u32(static_cast<std::uint32_t>(cm.r));
      w.u32(static_cast<std::uint32_t>(cm.k_p()));
      w.u32(static_cast<std::uint32_t>(cm.k_n()));
      write_f32s(w, cm.u_p.data);
      write_f32s(w, cm.s_p);
      write_f32s(w, cm.vt_p.data);
      write_f32s(w, cm.u_n.data);
      write_f32s(w, cm.s_n);
      write_f32s(w, cm.vt_n.data);
    }
  }
  const std::uint32_t crc = crc32_ieee(w.data().data(), w.data().size());
  w.u32(crc);
  return w.take();
}

CompressedUpdate decode(const std::uint8_t* data, std::size_t size) {
  if (size < 4) throw DecodeError(DecodeError::Kind::Truncated, "message too short");
  if (!std::equal(kMagic, kMagic + 4, data))
    throw DecodeError(DecodeError::Kind::BadMagic, "bad magic");
  if (size < 4 + 2 + 4 + 8 + 4 + 4)
    throw DecodeError(DecodeError::Kind::Truncated, "message too short");
  {
    ByteReader ver(data + 4, 2);
    if (ver.u16() != kVersion) throw DecodeError(DecodeError::Kind::BadVersion, "bad version");
  }
  const std::uint32_t want = ByteReader(data + size - 4, 4).u32();
  if (crc32_ieee(data, size - 4) != want)
    throw DecodeError(DecodeError::Kind::CrcMismatch, "CRC mismatch");

  ByteReader r(data, size - 4);
  r.str(4);
  r.u16();
  CompressedUpdate update;
  update.client_id = r.u32();
  update.sample_count = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t mi = 0; mi < count; ++mi) {
    CompressedMatrix cm;
    const std::uint16_t name_len = r.u16();
    cm.name = r.str(name_len);
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw DecodeError(DecodeError::Kind::Corrupt, "bad matrix kind");
    cm.kind = static_cast<CompressedMatrix::Kind>(kind);
    const std::uint8_t ndim = r.u8();
    if (ndim == 0) throw DecodeError(DecodeError::Kind::Corrupt, "zero-dim tensor");
    std::size_t elems = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || elems > kMaxElems / std::max<std::size_t>(d, 1))
        throw DecodeError(DecodeError::Kind::Corrupt, "implausible dims");
      elems *= d;
      cm.orig_dims.push_back(d);
    }
    cm.p = r.u32();
    cm.q = r.u32();
    const std::uint32_t rr = r.u32();
    const std::uint32_t k_p = r.u32();
    const std::uint32_t k_n = r.u32();
    if (cm.kind == CompressedMatrix::Kind::raw) {
      if (rr != 0 || k_p != 0 || k_n != 0)
        throw DecodeError(DecodeError::Kind::Corrupt, "raw matrix with factor ranks");
      if (r.remaining() < elems * 4)
        throw DecodeError(DecodeError::Kind::Truncated, "raw payload truncated");
      cm.raw = Tensor(cm.orig_dims, read_f32s(r, elems));
    } else {
      cm.r = rr;
      if (cm.p == 0 || cm.q == 0 || rr == 0 || k_p == 0 || k_n == 0 ||
          rr > std::min(cm.p, cm.q) || k_p > std::min(cm.p, static_cast<std::size_t>(rr)) ||
          k_n > std::min(static_cast<std::size_t>(rr), cm.q) ||
          cm.p * cm.q != elems || cm.p > kMaxElems / cm.q)
        throw DecodeError(DecodeError::Kind::Corrupt, "inconsistent factor ranks");
      const std::size_t need =
          cm.p * k_p + k_p + static_cast<std::size_t>(k_p) * rr + static_cast<std::size_t>(rr) * k_n + k_n + static_cast<std::size_t>(k_n) * cm.q;
      if (r.remaining() < need * 4)
        throw DecodeError(DecodeError::Kind::Truncated, "lowrank payload truncated");
      cm.u_p = Tensor({cm.p, k_p}, read_f32s(r, cm.p * k_p));
      cm.s_p = read_f32s(r, k_p);
      cm.vt_p = Tensor({k_p, static_cast<std::size_t>(rr)}, read_f32s(r, static_cast<std::size_t>(k_p) * rr));
      cm.u_n = Tensor({static_cast<std::size_t>(rr), k_n}, read_f32s(r, static_cast<std::size_t>(rr) * k_n));
      cm.s_n = read_f32s(r, k_n);
      cm.vt_n = Tensor({k_n, cm.q}, read_f32s(r, static_cast<std::size_t>(k_n) * cm.q));
      for (double s : cm.s_p)
        if (s < 0.0) throw DecodeError(DecodeError::Kind::Corrupt, "negative singular value");
      for (double s : cm.s_n)
        if (s < 0.0) throw DecodeError(DecodeError::Kind::Corrupt, "negative singular value");
    }
    update.uploaded_float_count += cm.payload_floats();
    update.full_float_count += elems;
    update.matrices.push_back(std::move(cm));
  }
  if (r.remaining() != 0)
    throw DecodeError(DecodeError::Kind::Corrupt, "trailing bytes in message");
  return update;
}

CompressedUpdate decode(const std::vector<std::uint8_t>& bytes) {
  return decode(bytes.data(), bytes.size());
}

}  // namespace prfl
