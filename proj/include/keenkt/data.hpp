#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "keenkt/tensor.hpp"

namespace keenkt {

enum class AnomalyLabel { kNone, kSlip, kGuess };

const char* anomaly_name(AnomalyLabel label);

// One student's ordered interactions with question ids already densely
// re-indexed into 0..Q-1.
struct StudentSequence {
  std::string student_id;
  std::vector<Index> questions;
  std::vector<int> responses;              // 0|1
  std::vector<AnomalyLabel> anomalies;     // parallel; kNone when unlabeled
  bool has_anomaly_labels = false;

  Index length() const { return static_cast<Index>(questions.size()); }
};

struct Dataset {
  std::vector<StudentSequence> sequences;       // one per student, file order
  std::vector<std::string> question_ids;        // dense index -> original id
  std::vector<std::string> question_concepts;   // parallel; "" when absent

  Index n_questions() const { return static_cast<Index>(question_ids.size()); }
  bool has_anomaly_labels() const;
};

// CSV schema (header required, comma-separated):
//   student_id,question_id,concept_id,correct,timestamp,anomaly
// concept_id, timestamp and anomaly are optional columns; empty values are
// allowed. correct must be 0 or 1; anomaly must be none|slip|guess.
// Records are grouped by student, ordered by timestamp (missing timestamps
// keep file order), question ids re-indexed by first appearance, and
// sequences shorter than 2 dropped.
Dataset load_csv(const std::string& path);

void write_csv(const Dataset& data, const std::string& path);

// Consecutive non-overlapping chunks of at most max_seq_len; a final chunk
// shorter than 2 is dropped.
std::vector<StudentSequence> window(const StudentSequence& seq, Index max_seq_len);
std::vector<StudentSequence> window_all(const std::vector<StudentSequence>& seqs,
                                        Index max_seq_len);

// Maps this dataset's dense question ids into another vocabulary (by the
// original string ids). Unknown questions are an error, never remapped.
std::vector<StudentSequence> remap_sequences(const Dataset& data,
                                             const std::vector<std::string>& target_ids);

struct FoldSplit {
  std::unordered_map<std::string, int> fold_of_student;
  int k = 0;

  int fold(const std::string& student_id) const;
};

// Deterministic seeded shuffle then round-robin; fold sizes within +-1.
FoldSplit split_folds(const std::vector<StudentSequence>& students, int k,
                      std::uint64_t seed);

struct SimulatorConfig {
  Index n_students = 100;
  Index n_questions = 50;
  Index n_concepts = 5;
  double p_learn = 0.1;
  double p_slip = 0.1;
  double p_guess = 0.1;
  double mastery_prior = 0.3;
  Index seq_len_min = 50;
  Index seq_len_max = 150;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError naming the offending field
};

// Per student: concepts start mastered with probability mastery_prior; each
// interaction draws a question uniformly, may transition its concept to
// mastered (p_learn), then responds with mastery flipped by slip/guess noise.
// Anomaly labels record the flips.
Dataset simulate(const SimulatorConfig& cfg);

}  // namespace keenkt
