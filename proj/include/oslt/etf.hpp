#pragma once

// Simplex equiangular tight frames: L unit vectors in R^d (d >= L here) with
// pairwise inner product -1/(L-1), used as the fixed feature-center classifier.

#include <Eigen/QR>

#include <fstream>
#include <string>

#include "oslt/common.hpp"
#include "oslt/npz.hpp"

#include <nlohmann/json.hpp>

namespace oslt {

struct SimplexEtf {
  Matrix vectors;  // d x L, one column per class
  int num_classes = 0;
  int dim = 0;
  std::uint64_t seed = 0;

  Vector column(int k) const { return vectors.col(k); }
};

struct EtfReport {
  bool pass = false;
  double max_norm_deviation = 0.0;   // max_i | ||n_i|| - 1 |
  double max_angle_deviation = 0.0;  // max_{i!=j} | n_i.n_j + 1/(L-1) |
};

// Orthonormal d x L basis U (U^T U = I_L) from a seeded Gaussian draw.
inline Matrix make_rotation(int dim, int num_classes, std::uint64_t seed) {
  require(dim > 0 && num_classes > 0, "make_rotation: dimensions must be positive");
  if (dim < num_classes)
    throw std::invalid_argument("make_rotation: dim (" + std::to_string(dim) + ") must be >= num_classes (" +
                                std::to_string(num_classes) + ")");
  Rng rng(derive_seed(seed, 0xe7fULL));
  Matrix g = random_normal_matrix(dim, num_classes, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, num_classes);
  // Fix column signs so the factorization is unique (R diagonal positive).
  Matrix r = qr.matrixQR().topRows(num_classes).triangularView<Eigen::Upper>();
  for (int j = 0; j < num_classes; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

// N = sqrt(L/(L-1)) * U * (I_L - (1/L) 1 1^T)
inline SimplexEtf make_simplex_etf_from(const Matrix& u, std::uint64_t seed = 0) {
  const auto dim = static_cast<int>(u.rows());
  const auto L = static_cast<int>(u.cols());
  require(L >= 2, "make_simplex_etf: need at least 2 classes");
  const Matrix centering = Matrix::Identity(L, L) - Matrix::Constant(L, L, 1.0 / L);
  SimplexEtf frame;
  frame.vectors = std::sqrt(static_cast<double>(L) / (L - 1)) * u * centering;
  frame.num_classes = L;
  frame.dim = dim;
  frame.seed = seed;
  return frame;
}

inline SimplexEtf make_simplex_etf(int dim, int num_classes, std::uint64_t seed) {
  return make_simplex_etf_from(make_rotation(dim, num_classes, seed), seed);
}

inline Matrix etf_gram(const SimplexEtf& frame) { return frame.vectors.transpose() * frame.vectors; }

inline EtfReport verify_etf(const SimplexEtf& frame, double tol) {
  const int L = frame.num_classes;
  const Matrix gram = etf_gram(frame);
  EtfReport rep;
  const double off = -1.0 / (L - 1);
  for (int i = 0; i < L; ++i) {
    rep.max_norm_deviation = std::max(rep.max_norm_deviation, std::abs(std::sqrt(gram(i, i)) - 1.0));
    for (int j = 0; j < L; ++j)
      if (i != j) rep.max_angle_deviation = std::max(rep.max_angle_deviation, std::abs(gram(i, j) - off));
  }
  rep.pass = rep.max_norm_deviation <= tol && rep.max_angle_deviation <= tol;
  return rep;
}

// Frame export: plain .npy next to a small json metadata record.
inline void save_etf(const SimplexEtf& frame, const std::string& npy_path, const std::string& meta_path) {
  std::vector<double> row_major(static_cast<std::size_t>(frame.dim) * frame.num_classes);
  for (int i = 0; i < frame.dim; ++i)
    for (int j = 0; j < frame.num_classes; ++j)
      row_major[static_cast<std::size_t>(i) * frame.num_classes + j] = frame.vectors(i, j);
  npz::save_npy(npy_path, {static_cast<std::size_t>(frame.dim), static_cast<std::size_t>(frame.num_classes)},
                row_major.data());
  nlohmann::json meta{{"dim", frame.dim}, {"num_classes", frame.num_classes}, {"seed", frame.seed}};
  std::ofstream f(meta_path);
  if (!f) throw std::runtime_error("save_etf: cannot open " + meta_path);
  f << meta.dump(2) << "\n";
}

inline SimplexEtf load_etf(const std::string& npy_path, const std::string& meta_path) {
  const npz::Array arr = npz::load_npy(npy_path);
  if (arr.shape.size() != 2) throw std::runtime_error("load_etf: expected a 2-d array");
  std::ifstream f(meta_path);
  if (!f) throw std::runtime_error("load_etf: cannot open " + meta_path);
  nlohmann::json meta = nlohmann::json::parse(f);
  SimplexEtf frame;
  frame.dim = static_cast<int>(arr.shape[0]);
  frame.num_classes = static_cast<int>(arr.shape[1]);
  frame.seed = meta.value("seed", 0ULL);
  if (meta.value("dim", frame.dim) != frame.dim || meta.value("num_classes", frame.num_classes) != frame.num_classes)
    throw std::runtime_error("load_etf: metadata does not match array shape");
  frame.vectors.resize(frame.dim, frame.num_classes);
  for (int i = 0; i < frame.dim; ++i)
    for (int j = 0; j < frame.num_classes; ++j)
      frame.vectors(i, j) = arr.data[static_cast<std::size_t>(i) * frame.num_classes + j];
  return frame;
}

}  // namespace oslt
