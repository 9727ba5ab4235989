#include "nplda/model_io.hpp"

#include "nplda/error.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace nplda {

namespace {

std::string shape(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

int parse_dim(const std::string& token, const std::string& key, const std::string& path) {
  if (token.rfind(key + "=", 0) != 0) throw ParseError(path + ":1: expected '" + key + "=<n>' in header");
  const std::string digits = token.substr(key.size() + 1);
  char* end = nullptr;
  const long v = std::strtol(digits.c_str(), &end, 10);
  if (digits.empty() || *end != '\0' || v < 1) throw ParseError(path + ":1: bad dimension '" + token + "'");
  return static_cast<int>(v);
}

Preprocessor preprocessor_from(const ModelFile& f) {
  Preprocessor p;
  p.projection.weight = f.require("W1", f.d, f.D);
  p.projection.bias = f.require("b1", f.d, 1);
  return p;
}

void add_preprocessor(ModelFile& f, const Preprocessor& p) {
  f.add("W1", p.projection.weight);
  f.add("b1", p.projection.bias);
}

}  // namespace

const Eigen::MatrixXd* ModelFile::find(const std::string& name) const {
  for (const auto& [n, m] : blocks)
    if (n == name) return &m;
  return nullptr;
}

const Eigen::MatrixXd& ModelFile::require(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
  const auto* m = find(name);
  if (!m) throw ParseError("model is missing matrix '" + name + "'");
  if (m->rows() != rows || m->cols() != cols)
    throw ParseError("dimension disagreement: matrix '" + name + "' is " + shape(m->rows(), m->cols()) +
                     ", expected " + shape(rows, cols) + " (D=" + std::to_string(D) + ", d=" + std::to_string(d) + ")");
  return *m;
}

void write_model_file(const std::string& path, const ModelFile& file) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << ModelFile::kMagic << ' ' << ModelFile::kVersion << " D=" << file.D << " d=" << file.d << '\n';
  char buf[40];
  for (const auto& [name, m] : file.blocks) {
    out << "MATRIX " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
        if (j) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty model file");
  std::istringstream header(line);
  std::string magic, version, dtok, ptok;
  header >> magic >> version >> dtok >> ptok;
  if (magic != ModelFile::kMagic) throw ParseError(path + ":1: not a model file (missing " + ModelFile::kMagic + ")");
  if (version != ModelFile::kVersion)
    throw ParseError(path + ":1: unsupported model version '" + version + "' (expected " + ModelFile::kVersion + ")");
  ModelFile f;
  f.D = parse_dim(dtok, "D", path);
  f.d = parse_dim(ptok, "d", path);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string kw, name;
    long rows = -1, cols = -1;
    ls >> kw >> name >> rows >> cols;
    if (kw != "MATRIX" || name.empty() || rows < 1 || cols < 1)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'MATRIX <name> <rows> <cols>'");
    if (f.find(name)) throw ParseError(path + ":" + std::to_string(line_no) + ": duplicate matrix '" + name + "'");
    Eigen::MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i) {
      if (!std::getline(in, line))
        throw ParseError(path + ": truncated file: matrix '" + name + "' ends after " + std::to_string(i) + " of " +
                         std::to_string(rows) + " rows");
      ++line_no;
      const char* p = line.c_str();
      for (long j = 0; j < cols; ++j) {
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(p, &end);
        if (end == p || errno == ERANGE || !std::isfinite(v))
          throw ParseError(path + ":" + std::to_string(line_no) + ": matrix '" + name + "' row " + std::to_string(i) +
                           " has fewer than " + std::to_string(cols) + " finite values");
        m(i, j) = v;
        p = end;
      }
      while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
      if (*p != '\0')
        throw ParseError(path + ":" + std::to_string(line_no) + ": matrix '" + name + "' row has extra values");
    }
    f.add(name, std::move(m));
  }
  return f;
}

ModelKind detect_kind(const ModelFile& f) {
  if (f.find("W2") || f.find("P")) return ModelKind::neural_plda;
  if (f.find("Phi")) return ModelKind::generative_plda;
  if (f.find("w")) return ModelKind::dplda;
  if (f.find("mu_t")) return ModelKind::pairwise_gaussian;
  throw ParseError("model file carries no recognizable model blocks");
}

ModelFile to_model_file(const NeuralPldaParams& p) {
  p.check_shapes();
  ModelFile f;
  f.D = p.input_dim();
  f.d = p.dim();
  f.add("W1", p.W1);
  f.add("b1", p.b1);
  f.add("W2", p.W2);
  f.add("b2", p.b2);
  f.add("P", p.P);
  f.add("Q", p.Q);
  f.add("theta", p.theta.transpose());
  return f;
}

NeuralPldaParams neural_plda_from(const ModelFile& f) {
  NeuralPldaParams p;
  p.W1 = f.require("W1", f.d, f.D);
  p.b1 = f.require("b1", f.d, 1);
  p.W2 = f.require("W2", f.d, f.d);
  p.b2 = f.require("b2", f.d, 1);
  p.P = f.require("P", f.d, f.d);
  p.Q = f.require("Q", f.d, f.d);
  p.theta = f.require("theta", 1, 2).transpose();
  return p;
}

ModelFile to_model_file(const GenerativeBundle& g) {
  ModelFile f;
  f.d = g.plda.dim();
  f.D = g.pre ? g.pre->in_dim() : f.d;
  if (g.pre) {
    if (g.pre->out_dim() != f.d) throw PreconditionError("preprocessor output does not match PLDA dimension");
    add_preprocessor(f, *g.pre);
  }
  f.add("mu", g.plda.mu);
  f.add("Phi", g.plda.phi);
  f.add("Sigma", g.plda.sigma);
  return f;
}

GenerativeBundle generative_from(const ModelFile& f) {
  GenerativeBundle g;
  if (f.find("W1")) g.pre = preprocessor_from(f);
  g.plda.mu = f.require("mu", f.d, 1);
  const auto* phi = f.find("Phi");
  if (!phi) throw ParseError("model is missing matrix 'Phi'");
  g.plda.phi = f.require("Phi", f.d, phi->cols());
  g.plda.sigma = f.require("Sigma", f.d, f.d);
  return g;
}

ModelFile to_model_file(const DpldaBundle& m) {
  ModelFile f;
  f.D = m.pre.in_dim();
  f.d = m.pre.out_dim();
  if (m.model.w.size() != dplda_expansion_size(f.d))
    throw PreconditionError("DPLDA weights do not match the preprocessor output dimension");
  add_preprocessor(f, m.pre);
  f.add("w", m.model.w);
  f.add("theta", m.model.theta.transpose());
  return f;
}

DpldaBundle dplda_from(const ModelFile& f) {
  DpldaBundle m;
  m.pre = preprocessor_from(f);
  m.model.w = f.require("w", dplda_expansion_size(f.d), 1);
  if (f.find("theta")) m.model.theta = f.require("theta", 1, 2).transpose();
  return m;
}

ModelFile to_model_file(const GaussianBundle& m) {
  ModelFile f;
  f.D = m.pre.in_dim();
  f.d = m.pre.out_dim();
  if (m.model.dim() != f.d) throw PreconditionError("Gaussian back-end does not match the preprocessor output");
  add_preprocessor(f, m.pre);
  f.add("mu_t", m.model.mu_t);
  f.add("mu_nt", m.model.mu_nt);
  f.add("Sigma_t", m.model.sigma_t);
  f.add("Sigma_nt", m.model.sigma_nt);
  return f;
}

GaussianBundle gaussian_from(const ModelFile& f) {
  GaussianBundle m;
  m.pre = preprocessor_from(f);
  m.model.mu_t = f.require("mu_t", 2 * f.d, 1);
  m.model.mu_nt = f.require("mu_nt", 2 * f.d, 1);
  m.model.sigma_t = f.require("Sigma_t", 2 * f.d, 2 * f.d);
  m.model.sigma_nt = f.require("Sigma_nt", 2 * f.d, 2 * f.d);
  return m;
}

}  // namespace nplda
