#pragma once

// Synthetic bilingual text-to-image data. Prompts are three tokens
// (shape, intensity, position). Teacher ids occupy [0, V_T); the student
// language maps each teacher id to id + V_T and adds culture tokens at
// [2 V_T, 2 V_T + culture). A culture token names a (shape, position) pair
// that never appears in parallel data and sits in the shape slot.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlkd/diffusion.hpp"

namespace xlkd {

inline constexpr std::size_t kPromptLength = 3;
inline constexpr int kMaxShapes = 4;

enum class Language { kTeacher, kStudent };

struct Semantics {
  int shape_id = 0;
  int intensity_id = 0;
  int position_id = 0;

  friend bool operator==(const Semantics&, const Semantics&) = default;
};

struct Prompt {
  Language language = Language::kTeacher;
  std::vector<int> tokens;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

class UntranslatableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CatalogError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Catalog {
  int shapes = 4;        // block, cross, diagonal, ring
  int intensities = 3;   // value i -> (i + 1) / intensities
  int positions = 9;     // perfect square grid
  int culture = 4;

  void validate() const;

  int concept_count() const { return shapes * intensities * positions; }
  int teacher_vocab() const { return shapes + intensities + positions; }
  int student_vocab() const { return teacher_vocab() + culture; }
  int student_offset() const { return teacher_vocab(); }
  int culture_token(int k) const { return 2 * teacher_vocab() + k; }
  double intensity_value(int i) const { return static_cast<double>(i + 1) / intensities; }

  // Culture concept k pairs shape k % shapes with position (2k + 1) % positions.
  int culture_shape(int k) const { return k % shapes; }
  int culture_position(int k) const { return (2 * k + 1) % positions; }
  bool is_culture(const Semantics& s) const;

  int semantics_id(const Semantics& s) const;
  Semantics semantics_from_id(int id) const;
  bool valid(const Semantics& s) const;

  std::vector<Semantics> all_semantics() const;       // ordered by id
  std::vector<Semantics> parallel_semantics() const;  // excludes culture pairs
  std::vector<Semantics> culture_semantics() const;

  Prompt teacher_prompt(const Semantics& s) const;
  // Culture semantics use the culture token in the shape slot.
  Prompt student_prompt(const Semantics& s) const;
  Semantics decode(const Prompt& p) const;
};

ImageSample render(const Semantics& sem, std::size_t side, const Catalog& catalog = {});

enum class Direction { kTeacherToStudent, kStudentToTeacher };
Prompt translate(const Prompt& prompt, Direction direction, const Catalog& catalog = {});

struct CorpusConfig {
  int parallel = 2000;  // N
  int culture = 240;    // M
  std::size_t side = 16;
  bool unique = false;  // sample without replacement
  Catalog catalog;
};

struct ParallelRecord {
  Prompt teacher;
  Prompt student;
  ImageSample image;
};

struct CultureRecord {
  Prompt student;
  ImageSample image;
};

struct CorpusBundle {
  CorpusConfig config;
  std::uint64_t seed = 0;
  std::vector<ParallelRecord> parallel;
  std::vector<CultureRecord> culture;
};

CorpusBundle gen_corpus(const CorpusConfig& cfg, std::uint64_t seed);

inline constexpr const char* kCorpusTag = "XLKD-CORPUS-1";

std::string serialize_corpus(const CorpusBundle& bundle);
CorpusBundle deserialize_corpus(std::string_view bytes);
void save_corpus(const CorpusBundle& bundle, const std::filesystem::path& path);
CorpusBundle load_corpus(const std::filesystem::path& path);

}  // namespace xlkd
