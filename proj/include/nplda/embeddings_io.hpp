#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nplda {

enum class Gender { male, female, unknown };

std::string_view to_string(Gender g);
std::optional<Gender> parse_gender(std::string_view token);

struct Embedding {
  std::string id;
  Eigen::VectorXd vector;
  std::optional<std::string> speaker_id;
  std::optional<Gender> gender;
  std::optional<std::string> source;
};

/// Ordered collection of embeddings sharing one dimension, indexed by id.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(int dim);

  /// Throws PreconditionError on dimension mismatch or duplicate id.
  void add(Embedding e);

  int dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const std::vector<Embedding>& entries() const { return entries_; }
  const Embedding& operator[](std::size_t i) const { return entries_[i]; }

  std::optional<std::size_t> find(std::string_view id) const;
  /// Like find() but throws PreconditionError naming the unresolved id.
  std::size_t index_of(std::string_view id) const;

  /// D x N matrix, one column per entry in set order.
  Eigen::MatrixXd as_matrix() const;

 private:
  int dim_ = 0;
  std::vector<Embedding> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class TrialLabel { target, nontarget };

struct Trial {
  std::string enroll_id;
  std::string test_id;
  std::optional<TrialLabel> label;
};

struct ScoreSet {
  std::vector<Trial> trials;
  std::vector<double> scores;
};

EmbeddingSet load_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const EmbeddingSet& set);

std::vector<Trial> load_trials(const std::string& path);
void write_trials(const std::string& path, const std::vector<Trial>& trials);

/// Writes `enroll<TAB>test<TAB>score`, scores with at least nine significant
/// digits and never fewer than nine decimals.
void write_scores(const std::string& path, const ScoreSet& s);
/// Trials in the returned set carry no labels; see attach_labels.
ScoreSet load_scores(const std::string& path);

/// Copies labels from `labeled` onto `s` by (enroll, test) key.
/// Throws PreconditionError when a scored pair has no labeled counterpart.
void attach_labels(ScoreSet& s, const std::vector<Trial>& labeled);

/// Text rendering of a score as used in score files.
std::string format_score(double score);

}  // namespace nplda
