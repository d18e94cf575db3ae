#pragma once

#include <torch/torch.h>

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wum/audio.hpp"
#include "wum/dsp/degrade.hpp"
#include "wum/dsp/resample.hpp"
#include "wum/errors.hpp"

namespace wum {

inline constexpr std::int64_t kChunkLength = 33600;

enum class Split { kTrain, kTest };

inline const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

enum class SplitScheme { kSpeaker, kFile };
enum class ShortClipPolicy { kPad, kSkip };

struct SplitSpec {
  SplitScheme scheme = SplitScheme::kSpeaker;
  double train_ratio = 0.9;
  std::uint64_t seed = 0;
  // non-empty overrides the ratio: exactly these speakers form the test split
  std::vector<std::string> test_speakers;

  void validate() const {
    wum::detail::require(train_ratio >= 0.0 && train_ratio <= 1.0, "data.split.train_ratio must lie in [0, 1]");
  }
  bool operator==(const SplitSpec&) const = default;
};

struct DataConfig {
  std::string root;
  std::string cache_dir;
  std::int64_t chunk = kChunkLength;
  double min_cutoff_hz = dsp::kMinCutoffHz;
  double max_cutoff_hz = dsp::kMaxCutoffHz;
  ShortClipPolicy short_clips = ShortClipPolicy::kPad;
  SplitSpec split;

  void validate() const {
    using wum::detail::require;
    require(chunk >= 16, "data.chunk must be >= 16");
    require(min_cutoff_hz >= dsp::kMinCutoffHz && max_cutoff_hz <= dsp::kMaxCutoffHz && min_cutoff_hz <= max_cutoff_hz,
            "data cutoff range must lie within [2000, 12000] Hz");
    split.validate();
  }
  bool operator==(const DataConfig&) const = default;
};

struct Utterance {
  std::string speaker;
  std::string path;  // relative to the index root
  double duration = 0.0;
  int rate = 0;
  Split split = Split::kTrain;

  bool operator==(const Utterance&) const = default;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<Utterance> items;
  std::size_t skipped = 0;

  [[nodiscard]] std::vector<Utterance> subset(Split s) const {
    std::vector<Utterance> out;
    for (const auto& u : items)
      if (u.split == s) out.push_back(u);
    return out;
  }
  [[nodiscard]] std::filesystem::path absolute(const Utterance& u) const { return root / u.path; }
};

namespace detail {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace detail

/// VCTK-style names ("p225_001.wav") give the speaker as the prefix before the
/// first underscore; otherwise the parent directory, then the file stem.
inline std::string speaker_of(const std::filesystem::path& rel) {
  const auto stem = rel.stem().string();
  if (auto pos = stem.find('_'); pos != std::string::npos && pos > 0) return stem.substr(0, pos);
  if (rel.has_parent_path() && !rel.parent_path().empty()) return rel.parent_path().filename().string();
  return stem;
}

/// Recursively indexes every readable *.wav under `root` in sorted order and
/// assigns splits. Unreadable files are counted in `skipped`.
inline DatasetIndex build_index(const std::filesystem::path& root, const SplitSpec& spec) {
  namespace fs = std::filesystem;
  spec.validate();
  wum::detail::require(fs::is_directory(root), "build_index: not a directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());

  DatasetIndex index;
  index.root = root;
  for (const auto& rel : files) {
    try {
      auto info = read_wav_info(root / rel);
      if (info.channels != 1 || info.rate <= 0 || info.frames == 0) {
        ++index.skipped;
        continue;
      }
      Utterance u;
      u.speaker = speaker_of(rel);
      u.path = rel.generic_string();
      u.rate = info.rate;
      u.duration = static_cast<double>(info.frames) / info.rate;
      index.items.push_back(std::move(u));
    } catch (const IoError&) {
      ++index.skipped;
    }
  }
  wum::detail::require(!index.items.empty(), "build_index: no readable WAV files under " + root.string());

  if (!spec.test_speakers.empty()) {
    const std::set<std::string> test(spec.test_speakers.begin(), spec.test_speakers.end());
    for (auto& u : index.items) u.split = test.contains(u.speaker) ? Split::kTest : Split::kTrain;
    return index;
  }

  std::vector<std::string> keys;
  if (spec.scheme == SplitScheme::kSpeaker) {
    std::set<std::string> speakers;
    for (const auto& u : index.items) speakers.insert(u.speaker);
    keys.assign(speakers.begin(), speakers.end());
  } else {
    for (const auto& u : index.items) keys.push_back(u.path);
  }
  std::mt19937_64 rng(spec.seed);
  std::shuffle(keys.begin(), keys.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_ratio * static_cast<double>(keys.size())));
  const std::set<std::string> train(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n_train));
  for (auto& u : index.items) {
    const auto& key = spec.scheme == SplitScheme::kSpeaker ? u.speaker : u.path;
    u.split = train.contains(key) ? Split::kTrain : Split::kTest;
  }
  return index;
}

inline nlohmann::json to_json(const DatasetIndex& index) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& u : index.items) {
    items.push_back({{"speaker", u.speaker},
                     {"path", u.path},
                     {"duration", u.duration},
                     {"rate", u.rate},
                     {"split", to_string(u.split)}});
  }
  return {{"root", index.root.generic_string()}, {"skipped", index.skipped}, {"items", items}};
}

inline DatasetIndex index_from_json(const nlohmann::json& j) {
  DatasetIndex index;
  try {
    index.root = j.at("root").get<std::string>();
    index.skipped = j.at("skipped").get<std::size_t>();
    for (const auto& it : j.at("items")) {
      Utterance u;
      u.speaker = it.at("speaker").get<std::string>();
      u.path = it.at("path").get<std::string>();
      u.duration = it.at("duration").get<double>();
      u.rate = it.at("rate").get<int>();
      const auto s = it.at("split").get<std::string>();
      wum::detail::require(s == "train" || s == "test", "index: bad split tag '" + s + "'");
      u.split = s == "train" ? Split::kTrain : Split::kTest;
      index.items.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("index: malformed JSON: ") + e.what());
  }
  return index;
}

/// 48 kHz copies of corpus files on disk, named by a hash of the source bytes.
class AudioCache {
 public:
  AudioCache() = default;
  explicit AudioCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

  [[nodiscard]] static std::string key_for(const std::filesystem::path& source) {
    auto bytes = wum::detail::slurp(source);
    return detail::hex64(detail::fnv1a(bytes.data(), bytes.size()));
  }

  /// 48 kHz audio for `source`, resampling (and caching) when needed.
  AudioBuffer load(const std::filesystem::path& source) const {
    if (dir_.empty()) return to_48k(read_wav(source));
    const auto cached = dir_ / (key_for(source) + ".wav");
    if (std::filesystem::exists(cached)) {
      try {
        auto a = read_wav(cached);
        if (a.rate == dsp::kTargetRate) return a;
      } catch (const IoError&) {
        // fall through and rebuild
      }
    }
    auto a = to_48k(read_wav(source));
    write_wav(cached, a, WavFormat::kFloat32);
    return a;
  }

  static AudioBuffer to_48k(AudioBuffer a) {
    if (a.rate == dsp::kTargetRate) return a;
    return dsp::resample_sinc(a, dsp::kTargetRate);
  }

 private:
  std::filesystem::path dir_;
};

struct TrainingExample {
  std::vector<float> x;
  std::vector<float> y;
  double cutoff = 0.0;
};

/// Peak-normalises the crop, then degrades it. x shares y's scale and is
/// clipped to [-1, 1].
inline TrainingExample make_example_at(std::span<const float> crop, double cutoff_hz) {
  TrainingExample ex;
  ex.cutoff = cutoff_hz;
  ex.y = dsp::normalize_peak(AudioBuffer({crop.begin(), crop.end()}, dsp::kTargetRate)).samples;
  ex.x = dsp::simulate_low_resolution(ex.y, cutoff_hz);
  for (float& v : ex.x) v = std::clamp(v, -1.0f, 1.0f);
  return ex;
}

inline double draw_cutoff(std::mt19937_64& rng, const DataConfig& cfg = {}) {
  return std::uniform_real_distribution<double>(cfg.min_cutoff_hz, cfg.max_cutoff_hz)(rng);
}

/// Random chunk crop (zero-padded on the right when the clip is short, or
/// nullopt under kSkip) with a uniformly drawn cutoff.
inline std::optional<TrainingExample> make_training_example(const AudioBuffer& y48, std::mt19937_64& rng,
                                                            const DataConfig& cfg = {}) {
  wum::detail::require(y48.rate == dsp::kTargetRate, "make_training_example: audio must be 48 kHz");
  wum::detail::require(!y48.empty(), "make_training_example: empty audio");
  const auto len = static_cast<std::int64_t>(y48.size());
  if (len < cfg.chunk && cfg.short_clips == ShortClipPolicy::kSkip) return std::nullopt;
  std::vector<float> crop(static_cast<std::size_t>(cfg.chunk), 0.0f);
  std::int64_t offset = 0;
  if (len > cfg.chunk) offset = std::uniform_int_distribution<std::int64_t>(0, len - cfg.chunk)(rng);
  const auto n = std::min(len, cfg.chunk);
  std::copy_n(y48.samples.begin() + offset, n, crop.begin());
  return make_example_at(crop, draw_cutoff(rng, cfg));
}

struct Batch {
  torch::Tensor x;  // (B, chunk)
  torch::Tensor y;
  std::vector<double> cutoffs;
  std::vector<std::size_t> ids;

  [[nodiscard]] std::int64_t size() const { return x.defined() ? x.size(0) : 0; }

  /// Stable hash of the batch contents, used in diagnostics.
  [[nodiscard]] std::string fingerprint() const {
    auto xc = x.contiguous(), yc = y.contiguous();
    auto h = detail::fnv1a(xc.data_ptr(), static_cast<std::size_t>(xc.nbytes()));
    h = detail::fnv1a(yc.data_ptr(), static_cast<std::size_t>(yc.nbytes()), h);
    return detail::hex64(h);
  }
};

/// Indexed producer of examples; `example` must be a pure function of its arguments.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  [[nodiscard]] virtual std::size_t size() const = 0;
  [[nodiscard]] virtual std::int64_t chunk() const = 0;
  [[nodiscard]] virtual TrainingExample example(std::size_t i, std::mt19937_64& rng) const = 0;
};

/// Precomputed examples, returned verbatim regardless of rng.
class FixedExampleSet : public ExampleSource {
 public:
  explicit FixedExampleSet(std::vector<TrainingExample> examples) : examples_(std::move(examples)) {
    wum::detail::require(!examples_.empty(), "FixedExampleSet: no examples");
    for (const auto& e : examples_) {
      wum::detail::require(e.x.size() == e.y.size() && e.y.size() == examples_.front().y.size(),
                           "FixedExampleSet: examples must share one length");
    }
  }
  [[nodiscard]] std::size_t size() const override { return examples_.size(); }
  [[nodiscard]] std::int64_t chunk() const override { return static_cast<std::int64_t>(examples_.front().y.size()); }
  [[nodiscard]] TrainingExample example(std::size_t i, std::mt19937_64&) const override { return examples_.at(i); }
  [[nodiscard]] const std::vector<TrainingExample>& examples() const { return examples_; }

 private:
  std::vector<TrainingExample> examples_;
};

/// One example per utterance of a split, re-cropped and re-degraded each draw.
class CorpusSource : public ExampleSource {
 public:
  CorpusSource(DatasetIndex index, Split split, DataConfig cfg)
      : index_(std::move(index)), cfg_(std::move(cfg)), cache_(cfg_.cache_dir) {
    cfg_.validate();
    for (const auto& u : index_.items) {
      if (u.split != split) continue;
      if (cfg_.short_clips == ShortClipPolicy::kSkip &&
          std::llround(u.duration * dsp::kTargetRate) < cfg_.chunk)
        continue;
      items_.push_back(u);
    }
    wum::detail::require(!items_.empty(), std::string("CorpusSource: no usable ") + to_string(split) + " utterances");
  }
  [[nodiscard]] std::size_t size() const override { return items_.size(); }
  [[nodiscard]] std::int64_t chunk() const override { return cfg_.chunk; }
  [[nodiscard]] TrainingExample example(std::size_t i, std::mt19937_64& rng) const override {
    auto audio = cache_.load(index_.absolute(items_.at(i)));
    auto ex = make_training_example(audio, rng, cfg_);
    if (!ex) throw InvalidInput("CorpusSource: clip shorter than one chunk: " + items_[i].path);
    return std::move(*ex);
  }

 private:
  DatasetIndex index_;
  DataConfig cfg_;
  AudioCache cache_;
  std::vector<Utterance> items_;
};

/// Epoch-addressable batch stream. Every epoch is a fresh permutation seeded
/// by (seed, epoch); each example gets its own rng seeded by (seed, epoch, id),
/// so any batch can be regenerated in isolation. The final partial batch is dropped.
class BatchIterator {
 public:
  BatchIterator(std::shared_ptr<const ExampleSource> source, std::int64_t batch_size, std::uint64_t seed)
      : source_(std::move(source)), batch_size_(batch_size), seed_(seed) {
    wum::detail::require(source_ != nullptr && source_->size() > 0, "batch_iterator: empty dataset");
    wum::detail::require(batch_size_ >= 1, "batch_iterator: batch_size must be >= 1");
    wum::detail::require(static_cast<std::size_t>(batch_size_) <= source_->size(),
                         "batch_iterator: batch_size " + std::to_string(batch_size_) + " exceeds dataset size " +
                             std::to_string(source_->size()));
  }

  [[nodiscard]] std::int64_t batch_size() const { return batch_size_; }
  [[nodiscard]] std::int64_t batches_per_epoch() const {
    return static_cast<std::int64_t>(source_->size()) / batch_size_;
  }

  [[nodiscard]] std::vector<std::size_t> epoch_order(std::int64_t epoch) const {
    std::vector<std::size_t> order(source_->size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  [[nodiscard]] Batch batch(std::int64_t epoch, std::int64_t index) const {
    wum::detail::require(index >= 0 && index < batches_per_epoch(), "batch_iterator: batch index out of range");
    const auto order = epoch_order(epoch);
    const auto t = source_->chunk();
    Batch b;
    b.x = torch::empty({batch_size_, t});
    b.y = torch::empty({batch_size_, t});
    for (std::int64_t k = 0; k < batch_size_; ++k) {
      const auto id = order[static_cast<std::size_t>(index * batch_size_ + k)];
      std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                        static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(id)};
      std::mt19937_64 rng(seq);
      auto ex = source_->example(id, rng);
      wum::detail::require(static_cast<std::int64_t>(ex.y.size()) == t && ex.x.size() == ex.y.size(),
                           "batch_iterator: example length differs from chunk");
      std::copy(ex.x.begin(), ex.x.end(), b.x[k].data_ptr<float>());
      std::copy(ex.y.begin(), ex.y.end(), b.y[k].data_ptr<float>());
      b.cutoffs.push_back(ex.cutoff);
      b.ids.push_back(id);
    }
    return b;
  }

  [[nodiscard]] std::vector<Batch> epoch(std::int64_t e) const {
    std::vector<Batch> out;
    for (std::int64_t i = 0; i < batches_per_epoch(); ++i) out.push_back(batch(e, i));
    return out;
  }

  [[nodiscard]] const ExampleSource& source() const { return *source_; }

 private:
  std::shared_ptr<const ExampleSource> source_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
};

inline BatchIterator batch_iterator(std::shared_ptr<const ExampleSource> source, std::int64_t batch_size,
                                    std::uint64_t seed) {
  return {std::move(source), batch_size, seed};
}

}  // namespace wum
