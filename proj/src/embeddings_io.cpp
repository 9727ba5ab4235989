#include "nplda/embeddings_io.hpp"

#include "nplda/error.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace nplda {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string where(const std::string& path, std::size_t line_no) {
  return path + ":" + std::to_string(line_no) + ": ";
}

double parse_double(std::string_view tok, const std::string& path, std::size_t line_no) {
  std::string s(tok);
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw ParseError(where(path, line_no) + "bad number '" + s + "'");
  return v;
}

std::optional<std::string> meta(std::string_view tok) {
  if (tok == "-") return std::nullopt;
  return std::string(tok);
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

std::string pair_key(const std::string& a, const std::string& b) { return a + '\x1f' + b; }

}  // namespace

std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::male: return "male";
    case Gender::female: return "female";
    case Gender::unknown: return "unknown";
  }
  return "unknown";
}

std::optional<Gender> parse_gender(std::string_view token) {
  if (token == "male" || token == "m") return Gender::male;
  if (token == "female" || token == "f") return Gender::female;
  if (token == "unknown") return Gender::unknown;
  return std::nullopt;
}

EmbeddingSet::EmbeddingSet(int dim) : dim_(dim) {
  if (dim < 1) throw PreconditionError("embedding dimension must be >= 1");
}

void EmbeddingSet::add(Embedding e) {
  if (dim_ == 0) {
    if (e.vector.size() < 1) throw PreconditionError("embedding dimension must be >= 1");
    dim_ = static_cast<int>(e.vector.size());
  }
  if (e.vector.size() != dim_)
    throw PreconditionError("embedding '" + e.id + "' has dimension " + std::to_string(e.vector.size()) +
                            ", expected " + std::to_string(dim_));
  auto [it, inserted] = index_.emplace(e.id, entries_.size());
  if (!inserted) throw PreconditionError("duplicate embedding id '" + e.id + "'");
  entries_.push_back(std::move(e));
}

std::optional<std::size_t> EmbeddingSet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingSet::index_of(std::string_view id) const {
  auto pos = find(id);
  if (!pos) throw PreconditionError("unresolved embedding id '" + std::string(id) + "'");
  return *pos;
}

Eigen::MatrixXd EmbeddingSet::as_matrix() const {
  Eigen::MatrixXd m(dim_, static_cast<Eigen::Index>(entries_.size()));
  for (std::size_t i = 0; i < entries_.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = entries_[i].vector;
  return m;
}

EmbeddingSet load_embeddings(const std::string& path) {
  auto in = open_in(path);
  EmbeddingSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() < 5)
      throw ParseError(where(path, line_no) + "expected id, speaker, gender, source and at least one value");
    Embedding e;
    e.id = std::string(tok[0]);
    e.speaker_id = meta(tok[1]);
    if (tok[2] != "-") {
      e.gender = parse_gender(tok[2]);
      if (!e.gender) throw ParseError(where(path, line_no) + "unknown gender '" + std::string(tok[2]) + "'");
    }
    e.source = meta(tok[3]);
    e.vector.resize(static_cast<Eigen::Index>(tok.size() - 4));
    for (std::size_t k = 4; k < tok.size(); ++k)
      e.vector[static_cast<Eigen::Index>(k - 4)] = parse_double(tok[k], path, line_no);
    if (!set.empty() && e.vector.size() != set.dim())
      throw ParseError(where(path, line_no) + "dimension mismatch: got " + std::to_string(e.vector.size()) +
                       " values, expected " + std::to_string(set.dim()));
    if (set.find(e.id)) throw ParseError(where(path, line_no) + "duplicate id '" + e.id + "'");
    set.add(std::move(e));
  }
  if (set.empty()) throw ParseError(path + ": no embeddings");
  return set;
}

void write_embeddings(const std::string& path, const EmbeddingSet& set) {
  auto out = open_out(path);
  char buf[64];
  for (const auto& e : set.entries()) {
    out << e.id << '\t' << e.speaker_id.value_or("-") << '\t'
        << (e.gender ? to_string(*e.gender) : std::string_view("-")) << '\t' << e.source.value_or("-") << '\t';
    for (Eigen::Index k = 0; k < e.vector.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", e.vector[k]);
      if (k) out << ' ';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

std::vector<Trial> load_trials(const std::string& path) {
  auto in = open_in(path);
  std::vector<Trial> trials;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 2 && tok.size() != 3)
      throw ParseError(where(path, line_no) + "expected 2 or 3 columns, got " + std::to_string(tok.size()));
    Trial t{std::string(tok[0]), std::string(tok[1]), std::nullopt};
    if (tok.size() == 3) {
      if (tok[2] == "target")
        t.label = TrialLabel::target;
      else if (tok[2] == "nontarget")
        t.label = TrialLabel::nontarget;
      else
        throw ParseError(where(path, line_no) + "unknown label '" + std::string(tok[2]) + "'");
    }
    trials.push_back(std::move(t));
  }
  return trials;
}

void write_trials(const std::string& path, const std::vector<Trial>& trials) {
  auto out = open_out(path);
  for (const auto& t : trials) {
    out << t.enroll_id << '\t' << t.test_id;
    if (t.label) out << '\t' << (*t.label == TrialLabel::target ? "target" : "nontarget");
    out << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

std::string format_score(double score) {
  int decimals = 9;
  double a = std::fabs(score);
  if (a > 0.0 && a < 1.0) {
    int exponent = static_cast<int>(std::floor(std::log10(a)));
    decimals = std::min(40, std::max(9, 9 - exponent - 1));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, score);
  return buf;
}

void write_scores(const std::string& path, const ScoreSet& s) {
  if (s.scores.size() != s.trials.size()) throw PreconditionError("score/trial count mismatch");
  auto out = open_out(path);
  for (std::size_t i = 0; i < s.trials.size(); ++i)
    out << s.trials[i].enroll_id << '\t' << s.trials[i].test_id << '\t' << format_score(s.scores[i]) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

ScoreSet load_scores(const std::string& path) {
  auto in = open_in(path);
  ScoreSet s;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 3) throw ParseError(where(path, line_no) + "expected 3 columns, got " + std::to_string(tok.size()));
    s.trials.push_back({std::string(tok[0]), std::string(tok[1]), std::nullopt});
    s.scores.push_back(parse_double(tok[2], path, line_no));
  }
  return s;
}

void attach_labels(ScoreSet& s, const std::vector<Trial>& labeled) {
  std::unordered_map<std::string, std::optional<TrialLabel>> labels;
  labels.reserve(labeled.size());
  for (const auto& t : labeled) labels[pair_key(t.enroll_id, t.test_id)] = t.label;
  for (auto& t : s.trials) {
    auto it = labels.find(pair_key(t.enroll_id, t.test_id));
    if (it == labels.end())
      throw PreconditionError("scored trial (" + t.enroll_id + ", " + t.test_id + ") not in trial list");
    t.label = it->second;
  }
}

}  // namespace nplda
