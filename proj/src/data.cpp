#include "keenkt/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace keenkt {

const char* anomaly_name(AnomalyLabel label) {
  switch (label) {
    case AnomalyLabel::kNone: return "none";
    case AnomalyLabel::kSlip: return "slip";
    case AnomalyLabel::kGuess: return "guess";
  }
  return "none";
}

bool Dataset::has_anomaly_labels() const {
  for (const StudentSequence& s : sequences) {
    for (AnomalyLabel a : s.anomalies) {
      if (a != AnomalyLabel::kNone) return true;
    }
  }
  return false;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

struct RawRow {
  std::string student;
  std::string question;
  std::string kc;
  int correct;
  std::int64_t sort_ts;  // missing timestamps sort first, keeping file order
  bool has_anomaly;
  AnomalyLabel anomaly;
  Index file_order;
};

[[noreturn]] void row_error(std::size_t line_no, const std::string& what) {
  throw ParseError("line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  std::vector<std::string> header = split_line(line);
  int col_student = -1, col_question = -1, col_concept = -1, col_correct = -1,
      col_ts = -1, col_anomaly = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string& h = header[i];
    int idx = static_cast<int>(i);
    if (h == "student_id") col_student = idx;
    else if (h == "question_id") col_question = idx;
    else if (h == "concept_id") col_concept = idx;
    else if (h == "correct") col_correct = idx;
    else if (h == "timestamp") col_ts = idx;
    else if (h == "anomaly") col_anomaly = idx;
    else throw ParseError("unknown column '" + h + "' in header");
  }
  if (col_student < 0) throw ParseError("missing column 'student_id'");
  if (col_question < 0) throw ParseError("missing column 'question_id'");
  if (col_correct < 0) throw ParseError("missing column 'correct'");

  std::vector<RawRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> f = split_line(line);
    if (f.size() != header.size()) {
      row_error(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                             std::to_string(f.size()));
    }
    RawRow r;
    r.student = f[static_cast<std::size_t>(col_student)];
    r.question = f[static_cast<std::size_t>(col_question)];
    if (r.student.empty()) row_error(line_no, "empty student_id");
    if (r.question.empty()) row_error(line_no, "empty question_id");
    r.kc = col_concept >= 0 ? f[static_cast<std::size_t>(col_concept)] : "";
    const std::string& c = f[static_cast<std::size_t>(col_correct)];
    if (c == "0") r.correct = 0;
    else if (c == "1") r.correct = 1;
    else row_error(line_no, "correct must be 0 or 1, got '" + c + "'");
    r.sort_ts = std::numeric_limits<std::int64_t>::min();
    if (col_ts >= 0 && !f[static_cast<std::size_t>(col_ts)].empty()) {
      const std::string& ts = f[static_cast<std::size_t>(col_ts)];
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), v);
      if (ec != std::errc() || p != ts.data() + ts.size()) {
        row_error(line_no, "bad timestamp '" + ts + "'");
      }
      r.sort_ts = v;
    }
    r.has_anomaly = false;
    r.anomaly = AnomalyLabel::kNone;
    if (col_anomaly >= 0 && !f[static_cast<std::size_t>(col_anomaly)].empty()) {
      const std::string& a = f[static_cast<std::size_t>(col_anomaly)];
      r.has_anomaly = true;
      if (a == "none") r.anomaly = AnomalyLabel::kNone;
      else if (a == "slip") r.anomaly = AnomalyLabel::kSlip;
      else if (a == "guess") r.anomaly = AnomalyLabel::kGuess;
      else row_error(line_no, "anomaly must be none|slip|guess, got '" + a + "'");
    }
    r.file_order = static_cast<Index>(rows.size());
    rows.push_back(std::move(r));
  }

  // group by student, keeping first-appearance order
  std::unordered_map<std::string, std::size_t> student_pos;
  std::vector<std::vector<RawRow>> grouped;
  for (RawRow& r : rows) {
    auto [it, inserted] = student_pos.try_emplace(r.student, grouped.size());
    if (inserted) grouped.emplace_back();
    grouped[it->second].push_back(std::move(r));
  }

  Dataset data;
  std::unordered_map<std::string, Index> qindex;
  for (std::vector<RawRow>& g : grouped) {
    std::stable_sort(g.begin(), g.end(), [](const RawRow& a, const RawRow& b) {
      return a.sort_ts < b.sort_ts;
    });
    if (g.size() < 2) continue;
    StudentSequence seq;
    seq.student_id = g.front().student;
    for (const RawRow& r : g) {
      auto [it, inserted] = qindex.try_emplace(r.question, data.question_ids.size());
      if (inserted) {
        data.question_ids.push_back(r.question);
        data.question_concepts.push_back(r.kc);
      } else if (data.question_concepts[static_cast<std::size_t>(it->second)].empty() &&
                 !r.kc.empty()) {
        data.question_concepts[static_cast<std::size_t>(it->second)] = r.kc;
      }
      seq.questions.push_back(it->second);
      seq.responses.push_back(r.correct);
      seq.anomalies.push_back(r.anomaly);
      seq.has_anomaly_labels = seq.has_anomaly_labels || r.has_anomaly;
    }
    data.sequences.push_back(std::move(seq));
  }
  if (data.sequences.empty()) {
    throw ParseError("'" + path + "' produced no usable sequences (need length >= 2)");
  }
  return data;
}

void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << "student_id,question_id,concept_id,correct,timestamp,anomaly\n";
  for (const StudentSequence& s : data.sequences) {
    for (Index t = 0; t < s.length(); ++t) {
      Index q = s.questions[static_cast<std::size_t>(t)];
      out << s.student_id << ',' << data.question_ids[static_cast<std::size_t>(q)]
          << ',' << data.question_concepts[static_cast<std::size_t>(q)] << ','
          << s.responses[static_cast<std::size_t>(t)] << ",,";
      if (s.has_anomaly_labels) {
        out << anomaly_name(s.anomalies[static_cast<std::size_t>(t)]);
      }
      out << '\n';
    }
  }
  if (!out) throw ParseError("write to '" + path + "' failed");
}

std::vector<StudentSequence> window(const StudentSequence& seq, Index max_seq_len) {
  if (max_seq_len < 2) throw DomainError("window: max_seq_len must be >= 2");
  std::vector<StudentSequence> out;
  for (Index start = 0; start < seq.length(); start += max_seq_len) {
    Index len = std::min(max_seq_len, seq.length() - start);
    if (len < 2) break;
    StudentSequence w;
    w.student_id = seq.student_id;
    w.has_anomaly_labels = seq.has_anomaly_labels;
    auto b = static_cast<std::size_t>(start);
    auto e = b + static_cast<std::size_t>(len);
    w.questions.assign(seq.questions.begin() + b, seq.questions.begin() + e);
    w.responses.assign(seq.responses.begin() + b, seq.responses.begin() + e);
    w.anomalies.assign(seq.anomalies.begin() + b, seq.anomalies.begin() + e);
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<StudentSequence> window_all(const std::vector<StudentSequence>& seqs,
                                        Index max_seq_len) {
  std::vector<StudentSequence> out;
  for (const StudentSequence& s : seqs) {
    auto w = window(s, max_seq_len);
    out.insert(out.end(), std::make_move_iterator(w.begin()),
               std::make_move_iterator(w.end()));
  }
  return out;
}

std::vector<StudentSequence> remap_sequences(const Dataset& data,
                                             const std::vector<std::string>& target_ids) {
  std::unordered_map<std::string, Index> target;
  for (std::size_t i = 0; i < target_ids.size(); ++i) {
    target[target_ids[i]] = static_cast<Index>(i);
  }
  std::vector<StudentSequence> out = data.sequences;
  for (StudentSequence& s : out) {
    for (Index& q : s.questions) {
      const std::string& orig = data.question_ids[static_cast<std::size_t>(q)];
      auto it = target.find(orig);
      if (it == target.end()) {
        throw DomainError("question id '" + orig + "' not in the model vocabulary");
      }
      q = it->second;
    }
  }
  return out;
}

int FoldSplit::fold(const std::string& student_id) const {
  auto it = fold_of_student.find(student_id);
  if (it == fold_of_student.end()) {
    throw DomainError("student '" + student_id + "' has no fold assignment");
  }
  return it->second;
}

FoldSplit split_folds(const std::vector<StudentSequence>& students, int k,
                      std::uint64_t seed) {
  if (k < 1) throw DomainError("split_folds: k must be >= 1");
  if (static_cast<int>(students.size()) < k) {
    throw DomainError("split_folds: fewer students (" + std::to_string(students.size()) +
                      ") than folds (" + std::to_string(k) + ")");
  }
  std::vector<std::size_t> order(students.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i);
    std::swap(order[i], order[d(rng)]);
  }
  FoldSplit split;
  split.k = k;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    split.fold_of_student[students[order[pos]].student_id] =
        static_cast<int>(pos % static_cast<std::size_t>(k));
  }
  return split;
}

void SimulatorConfig::validate() const {
  auto prob = [](const char* name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string(name) + " must lie in [0,1], got " + std::to_string(v));
    }
  };
  if (n_students < 1) throw ConfigError("n_students must be >= 1");
  if (n_questions < 1) throw ConfigError("n_questions must be >= 1");
  if (n_concepts < 1) throw ConfigError("n_concepts must be >= 1");
  if (n_concepts > n_questions) throw ConfigError("n_concepts must be <= n_questions");
  prob("p_learn", p_learn);
  prob("p_slip", p_slip);
  prob("p_guess", p_guess);
  prob("mastery_prior", mastery_prior);
  if (seq_len_min < 2) throw ConfigError("seq_len_min must be >= 2");
  if (seq_len_max < seq_len_min) throw ConfigError("seq_len_max must be >= seq_len_min");
}

Dataset simulate(const SimulatorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<Index> qdist(0, cfg.n_questions - 1);
  std::uniform_int_distribution<Index> ldist(cfg.seq_len_min, cfg.seq_len_max);
  std::bernoulli_distribution prior(cfg.mastery_prior);
  std::bernoulli_distribution learn(cfg.p_learn);
  std::bernoulli_distribution slip(cfg.p_slip);
  std::bernoulli_distribution guess(cfg.p_guess);

  auto concept_of = [&](Index q) { return q * cfg.n_concepts / cfg.n_questions; };

  Dataset data;
  std::vector<StudentSequence> raw;
  for (Index s = 0; s < cfg.n_students; ++s) {
    StudentSequence seq;
    seq.student_id = "s" + std::to_string(s);
    seq.has_anomaly_labels = true;
    Index len = ldist(rng);
    std::vector<char> mastered(static_cast<std::size_t>(cfg.n_concepts));
    for (Index c = 0; c < cfg.n_concepts; ++c) {
      mastered[static_cast<std::size_t>(c)] = prior(rng) ? 1 : 0;
    }
    for (Index t = 0; t < len; ++t) {
      Index q = qdist(rng);
      auto c = static_cast<std::size_t>(concept_of(q));
      if (!mastered[c] && learn(rng)) mastered[c] = 1;
      int response;
      AnomalyLabel label = AnomalyLabel::kNone;
      if (mastered[c]) {
        if (slip(rng)) {
          response = 0;
          label = AnomalyLabel::kSlip;
        } else {
          response = 1;
        }
      } else {
        if (guess(rng)) {
          response = 1;
          label = AnomalyLabel::kGuess;
        } else {
          response = 0;
        }
      }
      seq.questions.push_back(q);
      seq.responses.push_back(response);
      seq.anomalies.push_back(label);
    }
    raw.push_back(std::move(seq));
  }

  // normalize question indexing by first appearance, as load_csv would
  std::unordered_map<Index, Index> remap;
  for (StudentSequence& seq : raw) {
    for (Index& q : seq.questions) {
      auto [it, inserted] = remap.try_emplace(q, static_cast<Index>(remap.size()));
      if (inserted) {
        data.question_ids.push_back("q" + std::to_string(q));
        data.question_concepts.push_back("c" + std::to_string(concept_of(q)));
      }
      q = it->second;
    }
  }
  data.sequences = std::move(raw);
  return data;
}

}  // namespace keenkt
