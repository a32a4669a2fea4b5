#include "xlkd/corpus.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "xlkd/io.hpp"
#include "xlkd/rng.hpp"

namespace xlkd {

namespace {

int grid_side(int positions) {
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(positions))));
  return g;
}

}  // namespace

void Catalog::validate() const {
  if (shapes < 1 || shapes > kMaxShapes) throw CatalogError("catalog: shapes must be in [1, 4]");
  if (intensities < 1) throw CatalogError("catalog: intensities must be >= 1");
  const int g = grid_side(positions);
  if (positions < 1 || g * g != positions) throw CatalogError("catalog: positions must be a perfect square");
  if (culture < 0 || culture > shapes * positions) throw CatalogError("catalog: too many culture concepts");
  for (int a = 0; a < culture; ++a) {
    for (int b = a + 1; b < culture; ++b) {
      if (culture_shape(a) == culture_shape(b) && culture_position(a) == culture_position(b)) {
        throw CatalogError("catalog: culture concepts collide; reduce culture count");
      }
    }
  }
}

bool Catalog::is_culture(const Semantics& s) const {
  for (int k = 0; k < culture; ++k) {
    if (s.shape_id == culture_shape(k) && s.position_id == culture_position(k)) return true;
  }
  return false;
}

bool Catalog::valid(const Semantics& s) const {
  return s.shape_id >= 0 && s.shape_id < shapes && s.intensity_id >= 0 && s.intensity_id < intensities &&
         s.position_id >= 0 && s.position_id < positions;
}

int Catalog::semantics_id(const Semantics& s) const {
  if (!valid(s)) throw CatalogError("invalid semantics");
  return (s.shape_id * intensities + s.intensity_id) * positions + s.position_id;
}

Semantics Catalog::semantics_from_id(int id) const {
  if (id < 0 || id >= concept_count()) throw CatalogError("semantics id out of range");
  return {id / (intensities * positions), (id / positions) % intensities, id % positions};
}

std::vector<Semantics> Catalog::all_semantics() const {
  std::vector<Semantics> out;
  for (int id = 0; id < concept_count(); ++id) out.push_back(semantics_from_id(id));
  return out;
}

std::vector<Semantics> Catalog::parallel_semantics() const {
  std::vector<Semantics> out;
  for (const auto& s : all_semantics()) {
    if (!is_culture(s)) out.push_back(s);
  }
  return out;
}

std::vector<Semantics> Catalog::culture_semantics() const {
  std::vector<Semantics> out;
  for (const auto& s : all_semantics()) {
    if (is_culture(s)) out.push_back(s);
  }
  return out;
}

Prompt Catalog::teacher_prompt(const Semantics& s) const {
  if (!valid(s)) throw CatalogError("invalid semantics");
  return {Language::kTeacher, {s.shape_id, shapes + s.intensity_id, shapes + intensities + s.position_id}};
}

Prompt Catalog::student_prompt(const Semantics& s) const {
  if (!valid(s)) throw CatalogError("invalid semantics");
  const int off = student_offset();
  int first = s.shape_id + off;
  for (int k = 0; k < culture; ++k) {
    if (s.shape_id == culture_shape(k) && s.position_id == culture_position(k)) first = culture_token(k);
  }
  return {Language::kStudent, {first, off + shapes + s.intensity_id, off + shapes + intensities + s.position_id}};
}

Semantics Catalog::decode(const Prompt& p) const {
  if (p.tokens.size() != kPromptLength) throw CatalogError("prompt must have exactly 3 tokens");
  const int off = p.language == Language::kStudent ? student_offset() : 0;
  Semantics s;
  const int first = p.tokens[0];
  bool culture_slot = false;
  if (p.language == Language::kStudent && first >= culture_token(0) && first < culture_token(culture)) {
    const int k = first - culture_token(0);
    s.shape_id = culture_shape(k);
    culture_slot = true;
    s.position_id = culture_position(k);
  } else {
    s.shape_id = first - off;
  }
  s.intensity_id = p.tokens[1] - off - shapes;
  const int pos = p.tokens[2] - off - shapes - intensities;
  if (culture_slot && pos != s.position_id) throw CatalogError("culture token used with a foreign position");
  s.position_id = pos;
  if (!valid(s) || (!culture_slot && (first - off) >= shapes)) throw CatalogError("prompt tokens out of slot range");
  return s;
}

ImageSample render(const Semantics& sem, std::size_t side, const Catalog& catalog) {
  if (side < 8) throw std::invalid_argument("render: G must be >= 8");
  if (!catalog.valid(sem)) throw CatalogError("render: invalid semantics");
  ImageSample img;
  img.side = side;
  img.pixels.assign(side * side, 0.0);
  img.semantics_id = catalog.semantics_id(sem);

  const int G = static_cast<int>(side);
  const int g = G / 4;
  const int cells = grid_side(catalog.positions);
  const int cell_row = sem.position_id / cells;
  const int cell_col = sem.position_id % cells;
  auto origin = [&](int cell) {
    return static_cast<int>(std::floor(G * (2.0 * cell + 1.0) / (2.0 * cells) - g / 2.0 + 0.5));
  };
  const int top = origin(cell_row);
  const int left = origin(cell_col);
  const double value = catalog.intensity_value(sem.intensity_id);
  const int band_lo = g / 4, band_hi = g - g / 4;

  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      bool on = false;
      switch (sem.shape_id) {
        case 0: on = true; break;
        case 1: on = (r >= band_lo && r < band_hi) || (c >= band_lo && c < band_hi); break;
        case 2: on = r == c; break;
        case 3: on = r == 0 || c == 0 || r == g - 1 || c == g - 1; break;
      }
      const int y = top + r, x = left + c;
      if (on && y >= 0 && y < G && x >= 0 && x < G) img.pixels[static_cast<std::size_t>(y * G + x)] = value;
    }
  }
  return img;
}

Prompt translate(const Prompt& prompt, Direction direction, const Catalog& catalog) {
  const int vt = catalog.teacher_vocab();
  Prompt out;
  if (direction == Direction::kTeacherToStudent) {
    if (prompt.language != Language::kTeacher) throw std::invalid_argument("translate: expected a teacher prompt");
    out.language = Language::kStudent;
    for (int id : prompt.tokens) {
      if (id < 0 || id >= vt) throw std::out_of_range("translate: token outside teacher vocabulary");
      out.tokens.push_back(id + vt);
    }
  } else {
    if (prompt.language != Language::kStudent) throw std::invalid_argument("translate: expected a student prompt");
    out.language = Language::kTeacher;
    for (int id : prompt.tokens) {
      if (id >= 2 * vt) throw UntranslatableError("token " + std::to_string(id) + " has no teacher-language counterpart");
      if (id < vt) throw std::out_of_range("translate: token outside student vocabulary");
      out.tokens.push_back(id - vt);
    }
  }
  return out;
}

CorpusBundle gen_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.catalog.validate();
  if (cfg.parallel < 1) throw std::invalid_argument("gen_corpus: N must be >= 1");
  if (cfg.culture < 0) throw std::invalid_argument("gen_corpus: M must be >= 0");
  const auto par = cfg.catalog.parallel_semantics();
  const auto cul = cfg.catalog.culture_semantics();
  if (cfg.culture > 0 && cul.empty()) throw CatalogError("gen_corpus: culture records requested but catalog has none");
  if (cfg.unique && (static_cast<std::size_t>(cfg.parallel) > par.size() ||
                     static_cast<std::size_t>(cfg.culture) > cul.size())) {
    throw CatalogError("gen_corpus: catalog exhausted for unique sampling");
  }

  Rng rng(seed);
  auto draw = [&](const std::vector<Semantics>& pool, int count) {
    std::vector<Semantics> out;
    if (cfg.unique) {
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (int i = 0; i < count; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(i, static_cast<std::int64_t>(idx.size()) - 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
        out.push_back(pool[idx[static_cast<std::size_t>(i)]]);
      }
    } else {
      for (int i = 0; i < count; ++i) {
        out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
      }
    }
    return out;
  };

  CorpusBundle b;
  b.config = cfg;
  b.seed = seed;
  for (const auto& s : draw(par, cfg.parallel)) {
    b.parallel.push_back({cfg.catalog.teacher_prompt(s), cfg.catalog.student_prompt(s), render(s, cfg.side, cfg.catalog)});
  }
  for (const auto& s : draw(cul, cfg.culture)) {
    b.culture.push_back({cfg.catalog.student_prompt(s), render(s, cfg.side, cfg.catalog)});
  }
  return b;
}

// Layout: text manifest lines ("key value"), a line "data", then for each
// parallel record 3+3 int32 tokens and G*G float64 pixels, then for each
// culture record 3 int32 tokens and G*G float64 pixels. All little-endian.
std::string serialize_corpus(const CorpusBundle& b) {
  std::ostringstream head;
  const auto& c = b.config;
  head << kCorpusTag << '\n'
       << "seed " << b.seed << '\n'
       << "parallel " << b.parallel.size() << '\n'
       << "culture " << b.culture.size() << '\n'
       << "side " << c.side << '\n'
       << "unique " << (c.unique ? 1 : 0) << '\n'
       << "catalog " << c.catalog.shapes << ' ' << c.catalog.intensities << ' ' << c.catalog.positions << ' '
       << c.catalog.culture << '\n'
       << "prompt_length " << kPromptLength << '\n'
       << "data\n";
  std::string out = head.str();
  auto put_prompt = [&](const Prompt& p) {
    for (int t : p.tokens) io::put_i32(out, t);
  };
  auto put_image = [&](const ImageSample& img) {
    for (double v : img.pixels) io::put_f64(out, v);
  };
  for (const auto& r : b.parallel) {
    put_prompt(r.teacher);
    put_prompt(r.student);
    put_image(r.image);
  }
  for (const auto& r : b.culture) {
    put_prompt(r.student);
    put_image(r.image);
  }
  return out;
}

CorpusBundle deserialize_corpus(std::string_view bytes) {
  io::Reader in(bytes);
  if (in.line() != kCorpusTag) throw io::IoError("corpus: missing XLKD-CORPUS-1 tag");
  CorpusBundle b;
  std::size_t n_par = 0, n_cul = 0, plen = 0;
  for (;;) {
    std::istringstream line{std::string(in.line())};
    std::string key;
    line >> key;
    if (key == "data") break;
    if (key == "seed") line >> b.seed;
    else if (key == "parallel") line >> n_par;
    else if (key == "culture") line >> n_cul;
    else if (key == "side") line >> b.config.side;
    else if (key == "unique") line >> b.config.unique;
    else if (key == "catalog")
      line >> b.config.catalog.shapes >> b.config.catalog.intensities >> b.config.catalog.positions >>
          b.config.catalog.culture;
    else if (key == "prompt_length") line >> plen;
    else throw io::IoError("corpus: unknown manifest key '" + key + "'");
    if (line.fail()) throw io::IoError("corpus: malformed manifest line for '" + key + "'");
  }
  if (plen != kPromptLength) throw io::IoError("corpus: unsupported prompt length");
  b.config.parallel = static_cast<int>(n_par);
  b.config.culture = static_cast<int>(n_cul);
  const auto& cat = b.config.catalog;
  const std::size_t px = b.config.side * b.config.side;
  auto get_prompt = [&](Language lang) {
    Prompt p{lang, {}};
    for (std::size_t i = 0; i < kPromptLength; ++i) p.tokens.push_back(in.i32());
    return p;
  };
  auto get_image = [&](const Prompt& p) {
    ImageSample img;
    img.side = b.config.side;
    img.pixels.resize(px);
    for (auto& v : img.pixels) v = in.f64();
    img.semantics_id = cat.semantics_id(cat.decode(p));
    return img;
  };
  for (std::size_t i = 0; i < n_par; ++i) {
    ParallelRecord r;
    r.teacher = get_prompt(Language::kTeacher);
    r.student = get_prompt(Language::kStudent);
    r.image = get_image(r.teacher);
    b.parallel.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < n_cul; ++i) {
    CultureRecord r;
    r.student = get_prompt(Language::kStudent);
    r.image = get_image(r.student);
    b.culture.push_back(std::move(r));
  }
  if (in.remaining() != 0) throw io::IoError("corpus: trailing bytes after records");
  return b;
}

void save_corpus(const CorpusBundle& bundle, const std::filesystem::path& path) {
  io::write_atomic(path, serialize_corpus(bundle));
}

CorpusBundle load_corpus(const std::filesystem::path& path) { return deserialize_corpus(io::read_file(path)); }

}  // namespace xlkd
