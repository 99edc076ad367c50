#include "tokensynth/vqcpc.hpp"

#include "tokensynth/checkpoint.hpp"
#include "tokensynth/spectro.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fs = std::filesystem;

namespace tokensynth {

VqcpcSettings VqcpcSettings::from(const Config& cfg) {
  VqcpcSettings s;
  s.n_bins = static_cast<int>(cfg.integer("cqt.octaves") * cfg.integer("cqt.bins_per_octave"));
  s.enc_channels.clear();
  for (long v : cfg.int_list("vqcpc.enc_channels")) s.enc_channels.push_back(static_cast<int>(v));
  s.code_dim = static_cast<int>(cfg.integer("vqcpc.code_dim"));
  s.codebook_size = static_cast<int>(cfg.integer("vqcpc.codebook_size"));
  s.gru_hidden = static_cast<int>(cfg.integer("vqcpc.gru_hidden"));
  s.gru_layers = static_cast<int>(cfg.integer("vqcpc.gru_layers"));
  s.context_dim = static_cast<int>(cfg.integer("vqcpc.context_dim"));
  s.pred_steps = static_cast<int>(cfg.integer("vqcpc.pred_steps"));
  s.negatives = static_cast<int>(cfg.integer("vqcpc.negatives"));
  s.commit_beta = cfg.real("vqcpc.commit_beta");
  s.negative_mode = cfg.str("vqcpc.negative_mode");
  s.shared_negatives = cfg.integer("vqcpc.shared_negatives") != 0;
  if (s.negative_mode != "intra" && s.negative_mode != "dataset")
    throw std::runtime_error("vqcpc.negative_mode must be 'intra' or 'dataset', got '" +
                             s.negative_mode + "'");
  if (s.pred_steps < 1) throw std::runtime_error("vqcpc.pred_steps must be at least 1");
  if (s.negatives < 1) throw std::runtime_error("vqcpc.negatives must be at least 1");
  return s;
}

Tensor cqt_to_features(const Grid& cqt, double floor_db) {
  if (cqt.channels != 1)
    throw std::runtime_error("cqt_to_features: expected a single-channel grid, got " +
                             std::to_string(cqt.channels));
  const double floor_lin = std::pow(10.0, floor_db / 20.0);
  const double scale = -0.5 * floor_db;
  Tensor out = Tensor::zeros({cqt.frames, cqt.freq});
  double* o = out.data();
  for (long t = 0; t < cqt.frames; ++t) {
    for (long f = 0; f < cqt.freq; ++f) {
      double db = 20.0 * std::log10(std::max(cqt.at(0, f, t), floor_lin));
      if (db > 0.0) db = 0.0;
      o[t * cqt.freq + f] = db / scale + 1.0;
    }
  }
  return out;
}

QuantizeOne quantize_one(const std::vector<double>& e, const Tensor& codebook) {
  if (codebook.rank() != 2 || codebook.dim(0) == 0)
    throw std::runtime_error("quantize: empty codebook");
  const long C = codebook.dim(0), d = codebook.dim(1);
  if (static_cast<long>(e.size()) != d)
    throw std::runtime_error("quantize: embedding dim " + std::to_string(e.size()) +
                             " vs codebook dim " + std::to_string(d));
  const double* cb = codebook.data();
  long best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (long j = 0; j < C; ++j) {
    double dist = 0.0;
    for (long i = 0; i < d; ++i) {
      const double df = e[i] - cb[j * d + i];
      dist += df * df;
    }
    // strict < keeps the lowest index on ties
    if (dist < best_d) {
      best_d = dist;
      best = j;
    }
  }
  QuantizeOne q;
  q.token = static_cast<int>(best);
  q.quantized.assign(cb + best * d, cb + (best + 1) * d);
  q.vq = best_d;
  q.commit = best_d;
  return q;
}

std::vector<int> sample_negatives_intra(int seq_len, int positive_index, int n_neg, Rng& rng) {
  if (seq_len <= 1)
    throw std::runtime_error("sample_negatives_intra: no valid negatives in a length-1 sequence");
  if (positive_index < 0 || positive_index >= seq_len)
    throw std::runtime_error("sample_negatives_intra: positive index out of range");
  std::vector<int> out(static_cast<size_t>(n_neg));
  for (int j = 0; j < n_neg; ++j) {
    const long r = rng.uniform_int(seq_len - 1);
    out[j] = static_cast<int>(r < positive_index ? r : r + 1);
  }
  return out;
}

ad::Var infonce_from_logits(const ad::Var& logits) {
  const long rows = logits.dim(0), cand = logits.dim(1);
  if (rows < 1 || cand < 1) throw std::runtime_error("infonce: empty candidate set");
  Tensor mx = Tensor::zeros({rows, 1});
  const double* v = logits.value().data();
  for (long r = 0; r < rows; ++r) {
    double m = v[r * cand];
    for (long c = 1; c < cand; ++c) m = std::max(m, v[r * cand + c]);
    mx.data()[r] = m;
  }
  ad::Var shifted = ad::sub(logits, ad::constant(mx));
  ad::Var lse = ad::log(ad::sum_keep(ad::exp(shifted), 1));
  ad::Var pos = ad::narrow(shifted, 1, 0, 1);
  return ad::muls(ad::sum_all(ad::sub(lse, pos)), 1.0 / static_cast<double>(rows));
}

double infonce_loss(const std::vector<double>& h,
                    const std::vector<std::vector<double>>& positives,
                    const std::vector<std::vector<std::vector<double>>>& negatives,
                    const std::vector<Tensor>& heads) {
  const size_t K = heads.size();
  if (K == 0) throw std::runtime_error("infonce: empty candidate set");
  if (positives.size() != K || negatives.size() != K)
    throw std::runtime_error("infonce: positives/negatives count must equal head count");
  ad::NoGradGuard ng;
  double total = 0.0;
  for (size_t k = 0; k < K; ++k) {
    const Tensor& W = heads[k];
    const long dz = W.dim(0), dh = W.dim(1);
    if (static_cast<long>(h.size()) != dh)
      throw std::runtime_error("infonce: context dim mismatch at head " + std::to_string(k));
    std::vector<double> u(static_cast<size_t>(dz), 0.0);
    for (long i = 0; i < dz; ++i) {
      double s = 0.0;
      for (long j = 0; j < dh; ++j) s += W.data()[i * dh + j] * h[j];
      u[i] = s;
    }
    auto score = [&](const std::vector<double>& a) {
      if (static_cast<long>(a.size()) != dz)
        throw std::runtime_error("infonce: candidate dim mismatch at head " + std::to_string(k));
      double s = 0.0;
      for (long i = 0; i < dz; ++i) s += a[i] * u[i];
      return s;
    };
    const auto& negs = negatives[k];
    if (negs.empty()) throw std::runtime_error("infonce: empty candidate set");
    Tensor logits = Tensor::zeros({1, 1 + static_cast<long>(negs.size())});
    logits.data()[0] = score(positives[k]);
    for (size_t j = 0; j < negs.size(); ++j) logits.data()[1 + j] = score(negs[j]);
    total += infonce_from_logits(ad::constant(logits)).value().data()[0];
  }
  return total;
}

double perplexity_from_counts(const std::vector<double>& counts) {
  double tot = 0.0;
  for (double c : counts) {
    if (c < 0.0) throw std::runtime_error("perplexity: negative count");
    tot += c;
  }
  if (tot <= 0.0) throw std::runtime_error("perplexity: empty histogram");
  double ent = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / tot;
      ent -= p * std::log(p);
    }
  }
  return std::exp(ent);
}

double codebook_perplexity(const std::vector<std::vector<uint8_t>>& sequences, int codebook_size) {
  if (sequences.empty()) throw std::runtime_error("perplexity: empty token collection");
  std::vector<double> counts(static_cast<size_t>(codebook_size), 0.0);
  for (const auto& s : sequences) {
    for (uint8_t t : s) {
      if (t >= codebook_size) throw std::runtime_error("perplexity: token out of range");
      counts[t] += 1.0;
    }
  }
  return perplexity_from_counts(counts);
}

Tensor kmeans_codebook(const Tensor& points, int k, int iters, Rng& rng) {
  const long n = points.dim(0), d = points.dim(1);
  if (n < k) throw std::runtime_error("k-means: " + std::to_string(n) + " points for " +
                                      std::to_string(k) + " centroids");
  const double* pv = points.data();
  // D^2-weighted seeding spreads the initial centroids across the data,
  // which is the point of the warm-up init: no collapsed codebook
  Tensor cent = Tensor::zeros({static_cast<long>(k), d});
  auto dist2_to = [&](long i, const double* c) {
    double s = 0.0;
    for (long t = 0; t < d; ++t) {
      const double df = pv[i * d + t] - c[t];
      s += df * df;
    }
    return s;
  };
  long first = rng.uniform_int(n);
  std::copy(pv + first * d, pv + (first + 1) * d, cent.data());
  std::vector<double> d2(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) d2[i] = dist2_to(i, cent.data());
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (long i = 0; i < n; ++i) total += d2[i];
    long pick;
    if (total <= 0.0) {
      pick = rng.uniform_int(n);
    } else {
      double r = rng.uniform01() * total;
      pick = n - 1;
      for (long i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    std::copy(pv + pick * d, pv + (pick + 1) * d, cent.data() + j * d);
    for (long i = 0; i < n; ++i) d2[i] = std::min(d2[i], dist2_to(i, cent.data() + j * d));
  }

  std::vector<int> assign(static_cast<size_t>(n), -1);
  std::vector<double> own_dist(static_cast<size_t>(n), 0.0);
  std::vector<long> counts(static_cast<size_t>(k), 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    const double* cv = cent.data();
    for (long i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        double dist = 0.0;
        for (long t = 0; t < d; ++t) {
          const double df = pv[i * d + t] - cv[j * d + t];
          dist += df * df;
        }
        if (dist < bd) {
          bd = dist;
          best = j;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
      own_dist[i] = bd;
    }
    std::fill(counts.begin(), counts.end(), 0L);
    for (long i = 0; i < n; ++i) ++counts[assign[i]];
    // empty clusters steal the point farthest from its centroid
    for (int pass = 0; pass < k; ++pass) {
      int empty = -1;
      for (int j = 0; j < k; ++j)
        if (counts[j] == 0) {
          empty = j;
          break;
        }
      if (empty < 0) break;
      long far = 0;
      for (long i = 1; i < n; ++i)
        if (own_dist[i] > own_dist[far]) far = i;
      --counts[assign[far]];
      assign[far] = empty;
      counts[empty] = 1;
      own_dist[far] = -1.0;
      changed = true;
    }
    cent = Tensor::zeros({static_cast<long>(k), d});
    for (long i = 0; i < n; ++i)
      for (long t = 0; t < d; ++t) cent.data()[assign[i] * d + t] += pv[i * d + t];
    for (int j = 0; j < k; ++j)
      for (long t = 0; t < d; ++t) cent.data()[j * d + t] /= static_cast<double>(counts[j]);
    if (!changed && it > 0) break;
  }
  return cent;
}

VqcpcModel::VqcpcModel(const VqcpcSettings& s, Rng& rng) : s_(s) {
  long in = s.n_bins;
  std::vector<long> widths(s.enc_channels.begin(), s.enc_channels.end());
  widths.push_back(s.code_dim);
  for (size_t i = 0; i < widths.size(); ++i) {
    enc_.emplace_back(ps_, "enc." + std::to_string(i), in, widths[i], rng);
    in = widths[i];
  }
  ps_.add("codebook", init_normal({s.codebook_size, s.code_dim}, 0.05, rng));
  gru_ = Gru(ps_, "gru", s.code_dim, s.gru_hidden, s.gru_layers, rng);
  proj_ = Dense(ps_, "proj", s.gru_hidden, s.context_dim, rng);
  // small head init keeps untrained scores near uniform
  for (int k = 0; k < s.pred_steps; ++k)
    ps_.add("head." + std::to_string(k), init_normal({s.code_dim, s.context_dim}, 0.005, rng));
}

ad::Var VqcpcModel::encode_frames(const ad::Var& feats) {
  if (feats.dim(1) != s_.n_bins)
    throw std::runtime_error("encode_frames: expected " + std::to_string(s_.n_bins) +
                             " bins, got " + std::to_string(feats.dim(1)));
  ad::Var h = feats;
  for (size_t i = 0; i < enc_.size(); ++i) {
    h = enc_[i].forward(h);
    if (i + 1 < enc_.size()) h = ad::relu(h);
  }
  return h;
}

VqcpcModel::QuantizeRows VqcpcModel::quantize_rows(const ad::Var& e) {
  ad::Var cb = ps_.get("codebook");
  const long R = e.dim(0), d = e.dim(1), C = cb.dim(0);
  if (d != cb.dim(1)) throw std::runtime_error("quantize: embedding/codebook dim mismatch");
  const double* ev = e.value().data();
  const double* cv = cb.value().data();
  QuantizeRows out;
  out.tokens.resize(static_cast<size_t>(R));
  std::vector<long> idx(static_cast<size_t>(R));
  for (long r = 0; r < R; ++r) {
    long best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (long j = 0; j < C; ++j) {
      double dist = 0.0;
      for (long i = 0; i < d; ++i) {
        const double df = ev[r * d + i] - cv[j * d + i];
        dist += df * df;
      }
      if (dist < bd) {
        bd = dist;
        best = j;
      }
    }
    out.tokens[r] = static_cast<int>(best);
    idx[r] = best;
  }
  ad::Var q = ad::gather_rows(cb, idx);
  const double inv_r = 1.0 / static_cast<double>(R);
  ad::Var dv = ad::sub(ad::detach(e), q);
  out.vq = ad::muls(ad::sum_all(ad::mul(dv, dv)), inv_r);
  ad::Var dc = ad::sub(e, ad::detach(q));
  out.commit = ad::muls(ad::sum_all(ad::mul(dc, dc)), inv_r);
  out.straight_through = ad::add(e, ad::detach(ad::sub(q, e)));
  return out;
}

std::vector<ad::Var> VqcpcModel::context(const std::vector<ad::Var>& steps) {
  if (steps.empty()) throw std::runtime_error("context: empty sequence");
  std::vector<ad::Var> hs = gru_.forward(steps);
  for (auto& h : hs) h = proj_.forward(h);
  return hs;
}

void VqcpcModel::set_codebook(const Tensor& cb) {
  ad::Var v = ps_.get("codebook");
  if (cb.shape() != v.shape())
    throw std::runtime_error("set_codebook: shape mismatch " + shape_str(cb.shape()) + " vs " +
                             shape_str(v.shape()));
  v.value_ref() = cb.clone();
}

VqcpcStepLoss vqcpc_step_loss(VqcpcModel& m, const Tensor& feats, int batch, int frames,
                              Rng& rng, VqcpcFrozen* capture, const VqcpcFrozen* frozen) {
  const VqcpcSettings& s = m.settings();
  const int B = batch, L = frames, K = s.pred_steps, N = s.negatives;
  if (L <= K + 1)
    throw std::runtime_error("vqcpc_step_loss: " + std::to_string(L) +
                             " frames is too short for " + std::to_string(K) +
                             "-step prediction");
  if (feats.dim(0) != static_cast<long>(B) * L)
    throw std::runtime_error("vqcpc_step_loss: feature rows " + std::to_string(feats.dim(0)) +
                             " != batch*frames " + std::to_string(static_cast<long>(B) * L));

  ad::Var e = m.encode_frames(ad::constant(feats));
  const long R = static_cast<long>(B) * L;
  const long d = s.code_dim;

  std::vector<int> tokens;
  ad::Var q_st, vq, commit;
  if (frozen) {
    tokens = frozen->tokens;
    const double inv_r = 1.0 / static_cast<double>(R);
    ad::Var cb = m.codebook();
    std::vector<long> idx(tokens.begin(), tokens.end());
    ad::Var c_rows = ad::gather_rows(cb, idx);
    ad::Var dv = ad::sub(ad::constant(frozen->e_detached), c_rows);
    vq = ad::muls(ad::sum_all(ad::mul(dv, dv)), inv_r);
    Tensor c0 = t_bin(frozen->e_detached, frozen->st_offset, 0);
    ad::Var dc = ad::sub(e, ad::constant(c0));
    commit = ad::muls(ad::sum_all(ad::mul(dc, dc)), inv_r);
    q_st = ad::add(e, ad::constant(frozen->st_offset));
  } else {
    auto qr = m.quantize_rows(e);
    tokens = std::move(qr.tokens);
    q_st = qr.straight_through;
    vq = qr.vq;
    commit = qr.commit;
  }

  // candidate indices are flat rows of q_st (b*L + t'), drawn in
  // (b, t, k, j) order so the stream is reproducible
  const int T = L - K;
  std::vector<int> negs;
  if (frozen) {
    negs = frozen->negatives;
  } else {
    negs.resize(static_cast<size_t>(B) * T * K * N);
    size_t w = 0;
    for (int b = 0; b < B; ++b) {
      const long base = static_cast<long>(b) * L;
      for (int t = 0; t < T; ++t) {
        if (s.shared_negatives) {
          // one set per t, drawn outside the positive window t+1..t+K
          std::vector<int> shared(static_cast<size_t>(N));
          for (int j = 0; j < N; ++j) {
            const long r = rng.uniform_int(L - K);
            shared[j] = static_cast<int>(base + (r <= t ? r : r + K));
          }
          for (int k = 0; k < K; ++k)
            for (int j = 0; j < N; ++j) negs[w++] = shared[j];
        } else if (s.negative_mode == "dataset") {
          for (int k = 1; k <= K; ++k) {
            const long posflat = base + t + k;
            for (int j = 0; j < N; ++j) {
              const long r = rng.uniform_int(R - 1);
              negs[w++] = static_cast<int>(r < posflat ? r : r + 1);
            }
          }
        } else {
          for (int k = 1; k <= K; ++k) {
            const auto draw = sample_negatives_intra(L, t + k, N, rng);
            for (int j = 0; j < N; ++j) negs[w++] = static_cast<int>(base + draw[j]);
          }
        }
      }
    }
  }

  std::vector<ad::Var> steps(static_cast<size_t>(L));
  for (int t = 0; t < L; ++t) {
    std::vector<long> idx(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) idx[b] = static_cast<long>(b) * L + t;
    steps[t] = ad::gather_rows(q_st, idx);
  }
  std::vector<ad::Var> ctx = m.context(steps);
  // rows of c_all are t*B + b for the T context positions that predict
  ad::Var c_all = ad::concat(std::vector<ad::Var>(ctx.begin(), ctx.begin() + T), 0);

  const long rows = static_cast<long>(B) * T;
  ad::Var infonce;
  for (int k = 1; k <= K; ++k) {
    ad::Var u = ad::matmul(c_all, m.head(k - 1), false, true);
    std::vector<long> cand_idx(static_cast<size_t>(rows) * (N + 1));
    std::vector<long> u_idx(static_cast<size_t>(rows) * (N + 1));
    size_t w = 0;
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < T; ++t) {
        const long urow = static_cast<long>(t) * B + b;
        cand_idx[w] = static_cast<long>(b) * L + t + k;
        u_idx[w] = urow;
        ++w;
        const int* nj = &negs[(((static_cast<size_t>(b) * T + t) * K) + (k - 1)) * N];
        for (int j = 0; j < N; ++j) {
          cand_idx[w] = nj[j];
          u_idx[w] = urow;
          ++w;
        }
      }
    }
    ad::Var cand = ad::gather_rows(q_st, cand_idx);
    ad::Var urep = ad::gather_rows(u, u_idx);
    ad::Var logits =
        ad::reshape(ad::sum_keep(ad::mul(cand, urep), 1), {rows, static_cast<long>(N) + 1});
    ad::Var lk = infonce_from_logits(logits);
    infonce = infonce.defined() ? ad::add(infonce, lk) : lk;
  }

  VqcpcStepLoss out;
  out.total = ad::add(infonce, ad::add(vq, ad::muls(commit, s.commit_beta)));
  out.infonce = infonce.value().data()[0];
  out.vq = vq.value().data()[0];
  out.commit = commit.value().data()[0];
  std::vector<double> counts(static_cast<size_t>(s.codebook_size), 0.0);
  for (int t : tokens) counts[static_cast<size_t>(t)] += 1.0;
  out.perplexity = perplexity_from_counts(counts);

  if (capture) {
    capture->tokens = tokens;
    capture->negatives = negs;
    Tensor off = Tensor::zeros({R, d});
    const double* qs = q_st.value().data();
    const double* ev = e.value().data();
    for (long i = 0; i < R * d; ++i) off.data()[i] = qs[i] - ev[i];
    capture->st_offset = off;
    capture->e_detached = e.value().clone();
  }
  return out;
}

std::vector<Tensor> load_cqt_features(const std::string& run_dir, const Manifest& man,
                                      const Config& cfg) {
  const double floor_db = cfg.real("stft.floor_db");
  std::vector<Tensor> out;
  out.reserve(man.entries.size());
  for (const auto& en : man.entries) {
    Grid g = grid_load(run_dir + "/features/" + en.source_id + ".cqt.grid");
    out.push_back(cqt_to_features(g, floor_db));
  }
  return out;
}

VqcpcModel init_vqcpc_model(const Config& cfg, const std::vector<Tensor>& features, Rng& rng) {
  VqcpcSettings s = VqcpcSettings::from(cfg);
  VqcpcModel m(s, rng);
  if (features.empty()) throw std::runtime_error("vqcpc init: no feature sequences");

  const long warm_seqs = cfg.integer("vqcpc.warmup_batches") * cfg.integer("vqcpc.batch");
  long rows = 0;
  std::vector<long> picks(static_cast<size_t>(warm_seqs));
  for (long i = 0; i < warm_seqs; ++i) {
    picks[i] = rng.uniform_int(static_cast<long>(features.size()));
    rows += features[picks[i]].dim(0);
  }
  Tensor pts = Tensor::zeros({rows, static_cast<long>(s.code_dim)});
  {
    ad::NoGradGuard ng;
    long at = 0;
    for (long i = 0; i < warm_seqs; ++i) {
      const Tensor& f = features[picks[i]];
      ad::Var e = m.encode_frames(ad::constant(f));
      std::copy(e.value().data(), e.value().data() + e.numel(), pts.data() + at * s.code_dim);
      at += f.dim(0);
    }
  }
  m.set_codebook(kmeans_codebook(pts, s.codebook_size, 25, rng));
  return m;
}

void train_vqcpc(const Config& cfg, const std::string& run_dir, long steps_override) {
  Manifest man = manifest_load(run_dir + "/manifest_train.tsv");
  if (man.entries.empty()) throw std::runtime_error("train manifest is empty");
  std::vector<Tensor> features = load_cqt_features(run_dir, man, cfg);
  const long L = features[0].dim(0);
  const long bins = features[0].dim(1);
  for (const auto& f : features)
    if (f.dim(0) != L || f.dim(1) != bins)
      throw std::runtime_error("inconsistent feature geometry across training clips");

  Rng rng(static_cast<uint64_t>(cfg.integer("run.seed")));
  VqcpcModel m = init_vqcpc_model(cfg, features, rng);

  AdamConfig ac;
  ac.lr = cfg.real("vqcpc.lr");
  Adam opt(m.params(), ac);

  const long B = cfg.integer("vqcpc.batch");
  const long steps = steps_override >= 0 ? steps_override : cfg.integer("vqcpc.steps");
  const long log_every = std::max(1L, cfg.integer("vqcpc.log_interval"));

  fs::create_directories(run_dir + "/logs");
  fs::create_directories(run_dir + "/checkpoints");
  std::ofstream log(run_dir + "/logs/vqcpc.tsv", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + run_dir + "/logs/vqcpc.tsv");
  log << "step\ttotal\tinfonce\tvq\tcommit\tperplexity\n";

  for (long step = 1; step <= steps; ++step) {
    Tensor batch = Tensor::zeros({B * L, bins});
    for (long b = 0; b < B; ++b) {
      const long pick = rng.uniform_int(static_cast<long>(features.size()));
      std::copy(features[pick].data(), features[pick].data() + L * bins,
                batch.data() + b * L * bins);
    }
    VqcpcStepLoss loss =
        vqcpc_step_loss(m, batch, static_cast<int>(B), static_cast<int>(L), rng);
    const double tv = loss.total.value().data()[0];
    if (!std::isfinite(tv)) {
      char msg[256];
      std::snprintf(msg, sizeof msg,
                    "vqcpc training diverged at step %ld (total=%g infonce=%g vq=%g commit=%g)",
                    step, tv, loss.infonce, loss.vq, loss.commit);
      throw std::runtime_error(msg);
    }
    m.params().zero_grad();
    ad::backward(loss.total);
    opt.step(m.params());
    if (step == 1 || step % log_every == 0 || step == steps) {
      char line[384];
      std::snprintf(line, sizeof line, "%ld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", step, tv,
                    loss.infonce, loss.vq, loss.commit, loss.perplexity);
      log << line;
      log.flush();
      std::printf("[vqcpc] step %ld/%ld total %.4f infonce %.4f vq %.4f commit %.4f ppl %.2f\n",
                  step, steps, tv, loss.infonce, loss.vq, loss.commit, loss.perplexity);
      std::fflush(stdout);
    }
  }

  Checkpoint ck;
  ck.fingerprint = cfg.fingerprint();
  ck.put_int("meta.step", steps);
  ck.put_int("meta.n_bins", bins);
  ck.put_int("meta.frames", L);
  checkpoint_put_params(ck, "vqcpc", m.params());
  ck.save(run_dir + "/checkpoints/vqcpc.ck");
}

namespace {

void put_u16(std::ostream& f, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& f, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::istream& f) {
  unsigned char b[2];
  f.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void token_file_save(const std::string& path, const TokenFile& tf) {
  if (tf.id.size() > 65535) throw std::runtime_error("token file: id too long");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    put_u16(f, static_cast<uint16_t>(tf.id.size()));
    f.write(tf.id.data(), static_cast<std::streamsize>(tf.id.size()));
    put_u32(f, static_cast<uint32_t>(tf.pitch));
    put_u32(f, static_cast<uint32_t>(tf.tokens.size()));
    f.write(reinterpret_cast<const char*>(tf.tokens.data()),
            static_cast<std::streamsize>(tf.tokens.size()));
    if (!f) throw std::runtime_error("write failed for " + path);
  }
  fs::rename(tmp, path);
}

TokenFile token_file_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  TokenFile tf;
  const uint16_t idlen = get_u16(f);
  tf.id.resize(idlen);
  f.read(tf.id.data(), idlen);
  tf.pitch = static_cast<int>(get_u32(f));
  const uint32_t count = get_u32(f);
  tf.tokens.resize(count);
  f.read(reinterpret_cast<char*>(tf.tokens.data()), count);
  if (!f) throw std::runtime_error("truncated token file " + path);
  return tf;
}

VqcpcModel load_vqcpc_model(const Config& cfg, const std::string& ckpt_path) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  if (ck.fingerprint != cfg.fingerprint())
    throw std::runtime_error("encoder checkpoint was written under a different config");
  VqcpcSettings s = VqcpcSettings::from(cfg);
  const long n_bins = ck.integer("meta.n_bins");
  if (n_bins != s.n_bins)
    throw std::runtime_error("encoder checkpoint expects " + std::to_string(n_bins) +
                             " bins, config gives " + std::to_string(s.n_bins));
  Rng init_rng(1);
  VqcpcModel m(s, init_rng);
  checkpoint_get_params(ck, "vqcpc", m.params());
  return m;
}

std::vector<uint8_t> tokenize_features(VqcpcModel& m, const Tensor& feats) {
  ad::NoGradGuard ng;
  ad::Var e = m.encode_frames(ad::constant(feats));
  const Tensor& cb = m.codebook().value();
  const long code_dim = m.settings().code_dim;
  std::vector<uint8_t> out(static_cast<size_t>(feats.dim(0)));
  const double* ev = e.value().data();
  for (long t = 0; t < feats.dim(0); ++t) {
    std::vector<double> row(ev + t * code_dim, ev + (t + 1) * code_dim);
    out[static_cast<size_t>(t)] = static_cast<uint8_t>(quantize_one(row, cb).token);
  }
  return out;
}

int extract_tokens(const Config& cfg, const std::string& run_dir, const Manifest& man) {
  VqcpcModel m = load_vqcpc_model(cfg, run_dir + "/checkpoints/vqcpc.ck");
  const double floor_db = cfg.real("stft.floor_db");
  fs::create_directories(run_dir + "/tokens");
  int n = 0;
  for (const auto& en : man.entries) {
    Grid g = grid_load(run_dir + "/features/" + en.source_id + ".cqt.grid");
    TokenFile tf;
    tf.id = en.source_id;
    tf.pitch = en.pitch;
    tf.tokens = tokenize_features(m, cqt_to_features(g, floor_db));
    token_file_save(run_dir + "/tokens/" + en.source_id + ".tok", tf);
    ++n;
  }
  return n;
}

}  // namespace tokensynth
