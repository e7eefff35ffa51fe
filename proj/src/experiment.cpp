#include "safecompress/experiment.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace safecompress {

using nlohmann::json;

namespace {

// Reads the members of one JSON object, remembering which keys it consumed
// so leftovers can be reported as unknown.
class FieldReader {
public:
    FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string path(const std::string& key) const { return path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(path(key), "expected a number");
            out = v->get<double>();
        }
    }

    template <typename Int>
        requires std::is_integral_v<Int>
    void read(const std::string& key, Int& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) throw ConfigError(path(key), "expected an integer");
            if constexpr (std::is_unsigned_v<Int>) {
                if (!v->is_number_unsigned()) throw ConfigError(path(key), "expected a non-negative integer");
            }
            out = v->get<Int>();
        }
    }

    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(path(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void read(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(path(key), "expected a string");
            out = v->get<std::string>();
        }
    }

    template <typename T>
    void read_array(const std::string& key, std::vector<T>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw ConfigError(path(key), "expected an array");
            out.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                const json& e = (*v)[i];
                const bool ok = std::is_integral_v<T> ? e.is_number_integer() : e.is_number();
                if (!ok) throw ConfigError(path(key) + "[" + std::to_string(i) + "]", "expected a number");
                out.push_back(e.get<T>());
            }
        }
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown field");
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_dataset(const json& obj, DatasetSource& d) {
    FieldReader r(obj, "$.dataset");
    std::string kind = d.kind == DatasetSource::Kind::Csv ? "csv" : "synthetic";
    r.read("kind", kind);
    if (kind == "synthetic")
        d.kind = DatasetSource::Kind::Synthetic;
    else if (kind == "csv")
        d.kind = DatasetSource::Kind::Csv;
    else
        throw ConfigError(r.path("kind"), "expected \"synthetic\" or \"csv\"");
    r.read("seed", d.seed);
    auto& s = d.synthetic;
    r.read("train_size", s.train_size);
    r.read("test_size", s.test_size);
    r.read("features", s.features);
    r.read("classes", s.classes);
    r.read("separation", s.separation);
    r.read("noise", s.noise);
    r.read_array("class_priors", s.class_priors);
    r.read("train", d.train_csv);
    r.read("test", d.test_csv);
    r.read("label_column", d.label_column);
    r.finish();

    if (d.kind == DatasetSource::Kind::Csv) {
        if (d.train_csv.empty()) throw ConfigError(r.path("train"), "csv datasets need a train file");
        if (d.test_csv.empty()) throw ConfigError(r.path("test"), "csv datasets need a test file");
        return;
    }
    if (s.classes < 2) throw ConfigError(r.path("classes"), "must be >= 2");
    if (s.features < 1) throw ConfigError(r.path("features"), "must be >= 1");
    if (s.train_size < 2) throw ConfigError(r.path("train_size"), "must be >= 2");
    if (s.test_size < 2) throw ConfigError(r.path("test_size"), "must be >= 2");
    if (!(s.noise > 0.0) || !std::isfinite(s.noise)) throw ConfigError(r.path("noise"), "must be positive");
    if (!(s.separation >= 0.0) || !std::isfinite(s.separation))
        throw ConfigError(r.path("separation"), "must be non-negative");
    if (!s.class_priors.empty()) {
        if (static_cast<int>(s.class_priors.size()) != s.classes)
            throw ConfigError(r.path("class_priors"), "needs one entry per class");
        double total = 0.0;
        for (double p : s.class_priors) {
            if (!(p >= 0.0)) throw ConfigError(r.path("class_priors"), "entries must be non-negative");
            total += p;
        }
        if (!(total > 0.0)) throw ConfigError(r.path("class_priors"), "entries must not all be zero");
    }
}

void read_fine_tune(const json& obj, FineTuneConfig& f) {
    FieldReader r(obj, "$.fine_tune");
    r.read("epochs", f.epochs);
    r.read("batch_size", f.batch_size);
    r.read("learning_rate", f.optimizer.learning_rate);
    r.read("weight_decay", f.optimizer.weight_decay);
    r.read("beta1", f.optimizer.beta1);
    r.read("beta2", f.optimizer.beta2);
    r.finish();
}

void read_attacker(const json& obj, AttackerTrainConfig& a) {
    FieldReader r(obj, "$.attacker");
    r.read("epochs", a.epochs);
    r.read("finetune_epochs", a.finetune_epochs);
    r.read("batch_size", a.batch_size);
    r.read("learning_rate", a.learning_rate);
    r.read("width", a.width);
    r.finish();
}

json report_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"strategy", r.strategy ? json(r.strategy->name()) : json(nullptr)},
            {"task_acc_pct", r.task_acc_pct},
            {"mia_acc_b_pct", opt(r.mia_acc_b_pct)},
            {"mia_acc_w_pct", opt(r.mia_acc_w_pct)},
            {"tm_b", opt(r.tm_b)},
            {"tm_w", opt(r.tm_w)},
            {"tm_m", opt(r.tm_m)},
            {"score", r.score},
            {"sparsity", r.sparsity}};
}

}  // namespace

ExperimentSpec parse_config(const json& doc) {
    ExperimentSpec spec;
    RunConfig& c = spec.run;
    FieldReader r(doc, "$");
    std::string mode{selection_mode_name(c.mode)};
    r.read("mode", mode);
    try {
        c.mode = parse_selection_mode(mode);
    } catch (const RangeError&) {
        throw ConfigError(r.path("mode"), "expected \"bmia\", \"wmia\" or \"mmia\"");
    }
    r.read("omega", c.omega);
    r.read("lambda", c.lambda);
    r.read("alpha", c.alpha);
    r.read("beta", c.beta);
    r.read_array("hidden_layers", c.hidden_layers);
    r.read("iterations_per_round", c.iterations_per_round);
    r.read("total_rounds", c.total_rounds);
    r.read("batch_size", c.batch_size);
    r.read("learning_rate", c.learning_rate);
    r.read("momentum", c.momentum);
    r.read("prune_fraction", c.prune_fraction);
    r.read("cosine_decay", c.cosine_decay);
    r.read("threshold", c.threshold);
    r.read("growth_batch_size", c.growth_batch_size);
    r.read("adversarial_training", c.adversarial_training);
    r.read("seed", c.seed);
    if (const json* v = r.find("fine_tune")) read_fine_tune(*v, c.fine_tune);
    if (const json* v = r.find("attacker")) read_attacker(*v, c.attacker);
    if (const json* v = r.find("dataset")) read_dataset(*v, spec.dataset);
    r.read("output_dir", spec.output_dir);
    r.finish();
    c.validate();
    return spec;
}

ExperimentSpec load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("$", "cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("$", path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

json to_json(const ExperimentSpec& spec) {
    const RunConfig& c = spec.run;
    const DatasetSource& d = spec.dataset;
    json dataset = {{"kind", d.kind == DatasetSource::Kind::Csv ? "csv" : "synthetic"},
                    {"seed", d.seed},
                    {"train_size", d.synthetic.train_size},
                    {"test_size", d.synthetic.test_size},
                    {"features", d.synthetic.features},
                    {"classes", d.synthetic.classes},
                    {"separation", d.synthetic.separation},
                    {"noise", d.synthetic.noise},
                    {"class_priors", d.synthetic.class_priors},
                    {"train", d.train_csv},
                    {"test", d.test_csv},
                    {"label_column", d.label_column}};
    return {{"mode", std::string(selection_mode_name(c.mode))},
            {"omega", c.omega},
            {"lambda", c.lambda},
            {"alpha", c.alpha},
            {"beta", c.beta},
            {"hidden_layers", c.hidden_layers},
            {"iterations_per_round", c.iterations_per_round},
            {"total_rounds", c.total_rounds},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"prune_fraction", c.prune_fraction},
            {"cosine_decay", c.cosine_decay},
            {"threshold", c.threshold},
            {"growth_batch_size", c.growth_batch_size},
            {"adversarial_training", c.adversarial_training},
            {"seed", c.seed},
            {"fine_tune",
             {{"epochs", c.fine_tune.epochs},
              {"batch_size", c.fine_tune.batch_size},
              {"learning_rate", c.fine_tune.optimizer.learning_rate},
              {"weight_decay", c.fine_tune.optimizer.weight_decay},
              {"beta1", c.fine_tune.optimizer.beta1},
              {"beta2", c.fine_tune.optimizer.beta2}}},
            {"attacker",
             {{"epochs", c.attacker.epochs},
              {"finetune_epochs", c.attacker.finetune_epochs},
              {"batch_size", c.attacker.batch_size},
              {"learning_rate", c.attacker.learning_rate},
              {"width", c.attacker.width}}},
            {"dataset", dataset},
            {"output_dir", spec.output_dir}};
}

std::vector<std::size_t> class_counts(std::size_t n, int classes, const std::vector<double>& priors) {
    if (classes < 2) throw RangeError("need at least two classes");
    std::vector<double> p = priors.empty() ? std::vector<double>(static_cast<std::size_t>(classes), 1.0) : priors;
    if (static_cast<int>(p.size()) != classes) throw RangeError("one prior per class required");
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(total > 0.0)) throw RangeError("priors must have a positive sum");

    std::vector<std::size_t> counts(p.size());
    std::vector<double> remainder(p.size());
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (!(p[k] >= 0.0)) throw RangeError("priors must be non-negative");
        const double quota = static_cast<double>(n) * p[k] / total;
        counts[k] = static_cast<std::size_t>(std::floor(quota));
        remainder[k] = quota - std::floor(quota);
        assigned += counts[k];
    }
    std::vector<std::size_t> order = iota_indices(p.size());
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % order.size()]];
    return counts;
}

std::pair<LabeledDataset, LabeledDataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw DataError("synthetic data needs at least two classes");
    if (spec.features < 1) throw DataError("synthetic data needs at least one feature");
    if (!(spec.noise > 0.0) || !std::isfinite(spec.noise))
        throw DataError("degenerate covariance: noise must be positive and finite");
    if (!(spec.separation >= 0.0) || !std::isfinite(spec.separation))
        throw DataError("separation must be non-negative and finite");

    Rng mean_rng(derive_seed(seed, {1}));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix means(spec.classes, spec.features);
    for (Index i = 0; i < means.size(); ++i) means.data()[i] = spec.separation * normal(mean_rng);

    auto make = [&](std::size_t n, std::uint64_t tag) {
        LabeledDataset d;
        d.class_count = spec.classes;
        const auto counts = class_counts(n, spec.classes, spec.class_priors);
        std::vector<int> ordered;
        for (std::size_t k = 0; k < counts.size(); ++k) ordered.insert(ordered.end(), counts[k], static_cast<int>(k));
        Rng rng(derive_seed(seed, {tag}));
        for (std::size_t i : permutation(n, rng)) d.labels.push_back(ordered[i]);
        d.features.resize(static_cast<Index>(n), spec.features);
        for (std::size_t i = 0; i < n; ++i)
            for (Index j = 0; j < spec.features; ++j)
                d.features(static_cast<Index>(i), j) = means(d.labels[i], j) + spec.noise * normal(rng);
        return d;
    };
    return {make(spec.train_size, 2), make(spec.test_size, 3)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    if (line_no == 0 || line.find_first_not_of(" \t\r") == std::string::npos)
        throw DataError(path.string() + ": missing header row");
    const auto header = split_csv_line(line);
    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) {
        std::string available;
        for (const auto& h : header) available += (available.empty() ? "" : ", ") + h;
        throw DataError(path.string() + ": no label column '" + label_column + "' (available: " + available + ")");
    }
    const auto label_pos = static_cast<std::size_t>(label_it - header.begin());

    std::vector<double> values;
    LabeledDataset d;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " cells, header has " + std::to_string(header.size()));
        for (std::size_t c = 0; c < cells.size(); ++c) {
            auto where = [&] {
                return path.string() + ": line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                       " ('" + header[c] + "')";
            };
            if (c == label_pos) {
                int label = 0;
                if (!parse_number(cells[c], label) || label < 0)
                    throw DataError(where() + ": label '" + cells[c] + "' is not a non-negative integer");
                d.labels.push_back(label);
            } else {
                double v = 0.0;
                if (!parse_number(cells[c], v) || !std::isfinite(v))
                    throw DataError(where() + ": non-numeric value '" + cells[c] + "'");
                values.push_back(v);
            }
        }
        ++rows;
    }
    const auto cols = static_cast<Index>(header.size() - 1);
    d.features = Eigen::Map<const Matrix>(values.data(), static_cast<Index>(rows), cols);
    d.class_count = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
    return d;
}

void write_csv(const LabeledDataset& data, const std::filesystem::path& path, const std::string& label_column) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (Index j = 0; j < data.feature_count(); ++j) out << "f" << j << ",";
    out << label_column << "\n";
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (Index j = 0; j < data.feature_count(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", data.features(static_cast<Index>(i), j));
            out << buf << ",";
        }
        out << data.labels[i] << "\n";
    }
}

std::pair<LabeledDataset, LabeledDataset> load_dataset(const DatasetSource& source) {
    if (source.kind == DatasetSource::Kind::Synthetic) return generate_synthetic(source.synthetic, source.seed);
    auto train = load_csv(source.train_csv, source.label_column);
    auto test = load_csv(source.test_csv, source.label_column);
    train.class_count = test.class_count = std::max(train.class_count, test.class_count);
    if (test.feature_count() != train.feature_count())
        throw DataError("train and test csv files have different feature counts");
    return {std::move(train), std::move(test)};
}

namespace {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void byte(std::uint8_t b) { buf_.push_back(static_cast<char>(b)); }
    void raw(std::string_view s) { buf_.append(s); }
    const std::string& bytes() const { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : buf_(std::move(data)) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::uint8_t byte() { return static_cast<std::uint8_t>(get(1)); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n)
            throw FormatError("checkpoint truncated at byte " + std::to_string(buf_.size()) + " (needed " +
                              std::to_string(pos_ + n) + ")");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string buf_;
    std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "SAFC";

}  // namespace

void save_checkpoint(const TargetModel& model, const RunTrace& trace, std::uint64_t seed,
                     const std::filesystem::path& path) {
    ByteWriter w;
    w.raw(kMagic);
    w.u32(kCheckpointVersion);
    const auto& dims = model.layer_dims();
    w.u32(static_cast<std::uint32_t>(dims.size()));
    for (Index d : dims) w.u64(static_cast<std::uint64_t>(d));
    w.f64(model.mask().target_density());
    w.u64(trace.rounds.size());
    w.u64(model.iterations_done());
    w.u64(seed);
    w.u64(static_cast<std::uint64_t>(model.mask().active_count()));
    for (std::size_t k = 0; k < model.layer_count(); ++k) {
        const Matrix& wk = model.weight(k);
        for (Index i = 0; i < wk.size(); ++i) w.f64(wk.data()[i]);
        const Matrix& bk = model.bias(k);
        for (Index i = 0; i < bk.size(); ++i) w.f64(bk.data()[i]);
    }
    for (std::size_t k = 0; k < model.layer_count(); ++k) {
        const BoolMatrix& m = model.mask().layer(k);
        std::uint8_t acc = 0;
        for (Index i = 0; i < m.size(); ++i) {
            if (m.data()[i]) acc |= static_cast<std::uint8_t>(1u << (i % 8));
            if (i % 8 == 7) w.byte(acc), acc = 0;
        }
        if (m.size() % 8 != 0) w.byte(acc);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    ByteReader r(ss.str());

    if (r.remaining() < kMagic.size() || r.raw(kMagic.size()) != kMagic)
        throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t dim_count = r.u32();
    if (dim_count < 2 || dim_count > 64) throw FormatError("implausible layer count " + std::to_string(dim_count));
    std::vector<Index> dims;
    for (std::uint32_t i = 0; i < dim_count; ++i) {
        const std::uint64_t d = r.u64();
        if (d == 0 || d > (1u << 24)) throw FormatError("implausible layer width " + std::to_string(d));
        dims.push_back(static_cast<Index>(d));
    }
    const double omega = r.f64();
    Checkpoint cp;
    cp.rounds_done = r.u64();
    const std::uint64_t iterations = r.u64();
    cp.seed = r.u64();
    const std::uint64_t active = r.u64();

    ParameterMap params;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        Tensor<double> wt(std::vector<Index>{dims[k + 1], dims[k]});
        for (Index i = 0; i < wt.values().size(); ++i) wt.values().data()[i] = r.f64();
        Tensor<double> bt(std::vector<Index>{dims[k + 1]});
        for (Index i = 0; i < bt.values().size(); ++i) bt.values().data()[i] = r.f64();
        params.emplace(TargetModel::weight_name(k), std::move(wt));
        params.emplace(TargetModel::bias_name(k), std::move(bt));
    }
    std::vector<BoolMatrix> layers;
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        BoolMatrix m(dims[k + 1], dims[k]);
        std::uint8_t cur = 0;
        for (Index i = 0; i < m.size(); ++i) {
            if (i % 8 == 0) cur = r.byte();
            m.data()[i] = (cur >> (i % 8)) & 1u;
            bits += m.data()[i];
        }
        layers.push_back(std::move(m));
    }
    if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after checkpoint");
    if (bits != active)
        throw FormatError("mask holds " + std::to_string(bits) + " active bits but the header records " +
                          std::to_string(active));
    cp.model = TargetModel(dims, std::move(params), SparseMask(std::move(layers), omega));
    cp.model.set_iterations(iterations);
    if (cp.model.mask_violations() != 0) throw FormatError("checkpoint has nonzero weights at inactive positions");
    return cp;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

constexpr std::string_view kRoundsHeader =
    "round,strategy,task_acc_pct,mia_acc_b_pct,mia_acc_w_pct,tm_b,tm_w,tm_m,sparsity";

}  // namespace

std::vector<ReportRow> report_rows(const RunTrace& trace) {
    std::vector<ReportRow> rows;
    for (const auto& rec : trace.rounds) {
        for (const auto& rep : rec.candidates)
            rows.push_back({rec.round, rep.strategy ? rep.strategy->name() : "none", rep});
        const auto& sel = rec.selected_report();
        rows.push_back({rec.round, "selected:" + (sel.strategy ? sel.strategy->name() : std::string("none")), sel});
    }
    return rows;
}

nlohmann::json summary_json(const RunTrace& trace) {
    json rounds = json::array();
    StageSeconds total;
    for (const auto& rec : trace.rounds) {
        rounds.push_back({{"round", rec.round},
                          {"prune_fraction", rec.prune_fraction},
                          {"selected", rec.selected_report().strategy ? rec.selected_report().strategy->name() : ""},
                          {"active_before", rec.active_before},
                          {"active_after", rec.active_after},
                          {"sparsity", rec.sparsity},
                          {"audit_passed", rec.audit_passed}});
        total.training += rec.seconds.training;
        total.sparse_update += rec.seconds.sparse_update;
        total.attack_simulation += rec.seconds.attack_simulation;
        total.evaluation += rec.seconds.evaluation;
    }
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(trace.final_mask_hash));
    return {{"mode", std::string(selection_mode_name(trace.mode))},
            {"rounds", rounds},
            {"selected_strategies", trace.selected_strategies()},
            {"final", trace.final_report ? report_json(*trace.final_report) : json(nullptr)},
            {"final_mask_hash", hash},
            {"final_sparsity", trace.final_sparsity},
            {"seconds",
             {{"training", total.training},
              {"sparse_update", total.sparse_update},
              {"attack_simulation", total.attack_simulation},
              {"evaluation", total.evaluation}}}};
}

void emit_report(const RunTrace& trace, const std::filesystem::path& dir) {
    if (trace.rounds.empty() && !trace.final_report) throw Error("emit_report: empty trace");
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "rounds.csv");
    if (!csv) throw Error("cannot write " + (dir / "rounds.csv").string());
    csv << kRoundsHeader << "\n";
    for (const auto& row : report_rows(trace)) {
        const auto& r = row.report;
        csv << row.round << "," << row.strategy << "," << format_double(r.task_acc_pct) << ","
            << format_optional(r.mia_acc_b_pct) << "," << format_optional(r.mia_acc_w_pct) << ","
            << format_optional(r.tm_b) << "," << format_optional(r.tm_w) << "," << format_optional(r.tm_m) << ","
            << format_double(r.sparsity) << "\n";
    }
    if (!csv) throw Error("write failed for rounds.csv");
    std::ofstream js(dir / "summary.json");
    if (!js) throw Error("cannot write " + (dir / "summary.json").string());
    js << summary_json(trace).dump(2) << "\n";
}

std::vector<ReportRow> read_rounds_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(std::string(kRoundsHeader)))
        throw FormatError(path.string() + ": unexpected header");
    std::vector<ReportRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        auto bad = [&](const std::string& what) {
            return FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + what);
        };
        if (cells.size() != 9) throw bad("expected 9 cells");
        auto num = [&](std::size_t c) {
            double v = 0.0;
            if (!parse_number(cells[c], v)) throw bad("bad number '" + cells[c] + "'");
            return v;
        };
        auto opt = [&](std::size_t c) { return cells[c].empty() ? std::optional<double>{} : std::optional(num(c)); };
        ReportRow row;
        if (!parse_number(cells[0], row.round)) throw bad("bad round '" + cells[0] + "'");
        row.strategy = cells[1];
        const std::string_view name = std::string_view(row.strategy).starts_with("selected:")
                                          ? std::string_view(row.strategy).substr(9)
                                          : std::string_view(row.strategy);
        if (name != "none") row.report.strategy = UpdateStrategy::parse(name);
        if (row.report.strategy) row.report.candidate_id = row.report.strategy->order();
        row.report.task_acc_pct = num(2);
        row.report.mia_acc_b_pct = opt(3);
        row.report.mia_acc_w_pct = opt(4);
        row.report.tm_b = opt(5);
        row.report.tm_w = opt(6);
        row.report.tm_m = opt(7);
        row.report.sparsity = num(8);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace safecompress
