#include "vkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vkd/rng.hpp"
#include "vkd/text.hpp"

namespace vkd {

void GenSpec::validate() const {
  if (n_samples < 0) throw ConfigError("gen: n_samples must be >= 0");
  if (concept_dim < 1 || input_dim < 1 || seq_len < 1 || n_classes < 1)
    throw ConfigError("gen: dimensions must be >= 1");
  if (vocab < n_classes + 1)
    throw ConfigError("gen: vocab " + std::to_string(vocab) + " too small for padding plus " +
                      std::to_string(n_classes) + " finding tokens");
  if (!(text_keyword_prob >= 0.0 && text_keyword_prob <= 1.0))
    throw ConfigError("gen: text_keyword_prob must be in [0,1]");
  if (!(image_noise >= 0.0)) throw ConfigError("gen: image_noise must be >= 0");
}

bool Dataset::operator==(const Dataset& o) const {
  return input_dim == o.input_dim && seq_len == o.seq_len && vocab == o.vocab &&
         n_classes == o.n_classes && images == o.images && tokens == o.tokens &&
         labels == o.labels;
}

PairedSample sample_at(const Dataset& ds, std::int64_t i) {
  return PairedSample{ds.images.row(i).transpose(), ds.tokens.row(i).transpose(),
                      ds.labels.row(i).transpose()};
}

TaskParams task_parameters(const GenSpec& spec) {
  spec.validate();
  rng::Stream s(rng::derive(spec.seed, {rng::kTask}));
  TaskParams tp;
  tp.mixing.resize(spec.input_dim, spec.concept_dim);
  for (int r = 0; r < spec.input_dim; ++r)
    for (int c = 0; c < spec.concept_dim; ++c) tp.mixing(r, c) = s.next_gaussian();
  tp.hyperplanes.resize(spec.n_classes, spec.concept_dim);
  for (int r = 0; r < spec.n_classes; ++r)
    for (int c = 0; c < spec.concept_dim; ++c) tp.hyperplanes(r, c) = s.next_gaussian();
  tp.offsets = Eigen::VectorXd::Zero(spec.n_classes);
  return tp;
}

namespace {

// Filler token for one sign-quantized concept coordinate; stays out of the
// reserved range [0, n_classes].
int filler_token(const GenSpec& spec, int coord, bool positive) {
  const int reserved = spec.n_classes + 1;
  const int free_ids = spec.vocab - reserved;
  if (free_ids <= 0) return -1;
  std::uint64_t h = rng::derive(0x746f6b656eull, {static_cast<std::uint64_t>(coord),
                                                  positive ? 1ull : 0ull});
  return reserved + static_cast<int>(h % static_cast<std::uint64_t>(free_ids));
}

}  // namespace

Dataset generate(const GenSpec& spec) {
  spec.validate();
  TaskParams tp = task_parameters(spec);

  Dataset ds;
  ds.input_dim = spec.input_dim;
  ds.seq_len = spec.seq_len;
  ds.vocab = spec.vocab;
  ds.n_classes = spec.n_classes;
  ds.images.resize(spec.n_samples, spec.input_dim);
  ds.tokens.setZero(spec.n_samples, spec.seq_len);
  ds.labels.resize(spec.n_samples, spec.n_classes);

  Eigen::VectorXd c(spec.concept_dim);
  for (std::int64_t i = 0; i < spec.n_samples; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    // Per-sample counter streams: text is independent of image_noise, and
    // generation could be run per sample in any order.
    rng::Stream sc(rng::derive(spec.seed, {rng::kConcept, ui}));
    for (int j = 0; j < spec.concept_dim; ++j) c(j) = sc.next_gaussian();

    for (int j = 0; j < spec.n_classes; ++j)
      ds.labels(i, j) = (tp.hyperplanes.row(j).dot(c) + tp.offsets(j)) > 0.0 ? 1 : 0;

    rng::Stream sn(rng::derive(spec.seed, {rng::kImageNoise, ui}));
    for (int d = 0; d < spec.input_dim; ++d)
      ds.images(i, d) = tp.mixing.row(d).dot(c) + spec.image_noise * sn.next_gaussian();

    rng::Stream skw(rng::derive(spec.seed, {rng::kKeyword, ui}));
    int pos = 0;
    for (int j = 0; j < spec.n_classes && pos < spec.seq_len; ++j) {
      if (ds.labels(i, j) == 1 && skw.next_uniform() < spec.text_keyword_prob)
        ds.tokens(i, pos++) = j + 1;
    }
    for (int j = 0; j < spec.concept_dim && pos < spec.seq_len; ++j) {
      int t = filler_token(spec, j, c(j) > 0.0);
      if (t >= 0) ds.tokens(i, pos++) = t;
    }
    // remaining positions stay 0 (padding)
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_dataset: cannot open '" + path + "'");
  out << "vkds 1\n";
  out << "n=" << ds.size() << " d=" << ds.input_dim << " s=" << ds.seq_len
      << " v=" << ds.vocab << " k=" << ds.n_classes << "\n";
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    for (int d = 0; d < ds.input_dim; ++d) {
      if (d) out << ' ';
      out << format_double(ds.images(i, d));
    }
    out << " |";
    for (int s = 0; s < ds.seq_len; ++s) out << ' ' << ds.tokens(i, s);
    out << " |";
    for (int k = 0; k < ds.n_classes; ++k) out << ' ' << ds.labels(i, k);
    out << '\n';
  }
  if (!out) throw IoError("write_dataset: write failed on '" + path + "'");
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::int64_t line_no, const std::string& msg) {
  throw IoError(path + ":" + std::to_string(line_no) + ": " + msg);
}

std::int64_t header_field(std::string_view f, char key, const std::string& path) {
  if (f.size() < 3 || f[0] != key || f[1] != '=')
    throw IoError(path + ":2: expected '" + std::string(1, key) + "=<int>', got '" +
                  std::string(f) + "'");
  return parse_int(f.substr(2), path + ":2");
}

}  // namespace

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_dataset: cannot open '" + path + "'");
  std::string line;
  std::int64_t line_no = 1;
  if (!std::getline(in, line) || line != "vkds 1")
    parse_fail(path, 1, "expected header 'vkds 1'");
  ++line_no;
  if (!std::getline(in, line)) parse_fail(path, 2, "missing size header");
  auto fields = split_fields(line);
  if (fields.size() != 5) parse_fail(path, 2, "size header needs 5 fields n= d= s= v= k=");
  const std::int64_t n = header_field(fields[0], 'n', path);
  const std::int64_t d = header_field(fields[1], 'd', path);
  const std::int64_t s = header_field(fields[2], 's', path);
  const std::int64_t v = header_field(fields[3], 'v', path);
  const std::int64_t k = header_field(fields[4], 'k', path);
  if (n < 0 || d < 1 || s < 1 || v < 1 || k < 1) parse_fail(path, 2, "invalid extents");

  Dataset ds;
  ds.input_dim = static_cast<int>(d);
  ds.seq_len = static_cast<int>(s);
  ds.vocab = static_cast<int>(v);
  ds.n_classes = static_cast<int>(k);
  ds.images.resize(n, d);
  ds.tokens.resize(n, s);
  ds.labels.resize(n, k);

  std::int64_t i = 0;
  while (i < n) {
    ++line_no;
    if (!std::getline(in, line))
      parse_fail(path, line_no, "expected " + std::to_string(n) + " samples, found " +
                                    std::to_string(i));
    auto f = split_fields(line);
    const std::size_t want = static_cast<std::size_t>(d + s + k + 2);
    if (f.size() != want)
      parse_fail(path, line_no, "expected " + std::to_string(want) + " fields, found " +
                                    std::to_string(f.size()));
    std::size_t pos = 0;
    for (int j = 0; j < d; ++j)
      ds.images(i, j) = parse_double(f[pos++], path + ":" + std::to_string(line_no));
    if (f[pos++] != "|") parse_fail(path, line_no, "expected '|' after image fields");
    for (int j = 0; j < s; ++j) {
      auto t = parse_int(f[pos++], path + ":" + std::to_string(line_no));
      if (t < 0 || t >= v)
        parse_fail(path, line_no, "token " + std::to_string(t) + " out of range [0," +
                                      std::to_string(v) + ")");
      ds.tokens(i, j) = static_cast<int>(t);
    }
    if (f[pos++] != "|") parse_fail(path, line_no, "expected '|' after token fields");
    for (int j = 0; j < k; ++j) {
      auto b = parse_int(f[pos++], path + ":" + std::to_string(line_no));
      if (b != 0 && b != 1) parse_fail(path, line_no, "label bit must be 0/1");
      ds.labels(i, j) = static_cast<int>(b);
    }
    ++i;
  }
  return ds;
}

Dataset take_rows(const Dataset& ds, const std::vector<std::int64_t>& rows) {
  Dataset out;
  out.input_dim = ds.input_dim;
  out.seq_len = ds.seq_len;
  out.vocab = ds.vocab;
  out.n_classes = ds.n_classes;
  out.images.resize(static_cast<std::int64_t>(rows.size()), ds.input_dim);
  out.tokens.resize(static_cast<std::int64_t>(rows.size()), ds.seq_len);
  out.labels.resize(static_cast<std::int64_t>(rows.size()), ds.n_classes);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.images.row(static_cast<std::int64_t>(r)) = ds.images.row(rows[r]);
    out.tokens.row(static_cast<std::int64_t>(r)) = ds.tokens.row(rows[r]);
    out.labels.row(static_cast<std::int64_t>(r)) = ds.labels.row(rows[r]);
  }
  return out;
}

SplitResult split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split: negative fraction");
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split: fractions sum to " + format_double(total) + ", expected 1");

  const std::int64_t n = ds.size();
  auto perm = rng::permutation(n, rng::derive(seed, {rng::kSplit}));
  const auto nd = static_cast<double>(n);
  const auto b1 = std::clamp<std::int64_t>(std::llround(fractions[0] * nd), 0, n);
  const auto b2 = std::clamp<std::int64_t>(std::llround((fractions[0] + fractions[1]) * nd), b1, n);

  std::vector<std::int64_t> tr(perm.begin(), perm.begin() + b1);
  std::vector<std::int64_t> va(perm.begin() + b1, perm.begin() + b2);
  std::vector<std::int64_t> te(perm.begin() + b2, perm.end());
  return SplitResult{take_rows(ds, tr), take_rows(ds, va), take_rows(ds, te)};
}

}  // namespace vkd
