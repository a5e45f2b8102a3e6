#include "mbcr/ecg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "mbcr/archive.hpp"

namespace mbcr {
namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

Error line_error(std::size_t line, const std::string& what) {
    return Error("line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (true) {
        std::string cell;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        if (i < line.size() && line[i] == '"') {
            ++i;
            bool closed = false;
            while (i < line.size()) {
                if (line[i] == '"') {
                    if (i + 1 < line.size() && line[i + 1] == '"') {
                        cell += '"';
                        i += 2;
                        continue;
                    }
                    ++i;
                    closed = true;
                    break;
                }
                cell += line[i++];
            }
            if (!closed) throw line_error(line_no, "unterminated quoted field");
            while (i < line.size() && line[i] != ',') {
                if (!std::isspace(static_cast<unsigned char>(line[i])))
                    throw line_error(line_no, "text after quoted field");
                ++i;
            }
        } else {
            const std::size_t end = std::min(line.find(',', i), line.size());
            cell = std::string(trim(line.substr(i, end - i)));
            i = end;
        }
        out.push_back(std::move(cell));
        if (i >= line.size()) break;
        ++i;  // comma
    }
    return out;
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos && trim(s) == s) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

template <class T>
T parse_number(std::string_view cell, std::size_t line_no, const char* what) {
    T v{};
    const char* b = cell.data();
    const char* e = b + cell.size();
    if (!cell.empty() && *b == '+') ++b;
    auto res = std::from_chars(b, e, v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != e)
        throw line_error(line_no, std::string("non-numeric ") + what + " '" + std::string(cell) + "'");
    return v;
}

std::string normalize_label(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : trim(s)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

}  // namespace

double EcgRecord::duration_seconds() const {
    if (sample_rate_hz <= 0) throw Error("sample rate must be positive");
    return static_cast<double>(n_samples()) / static_cast<double>(sample_rate_hz);
}

EcgRecord parse_record(std::istream& is) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(is, line) || trim(line).empty()) throw line_error(1, "missing header");
    auto head = split_csv(line, line_no);
    if (head.size() != 5)
        throw line_error(1, "header needs id,sample_rate_hz,n_leads,n_samples,label_text (got " +
                                std::to_string(head.size()) + " fields)");
    EcgRecord rec;
    rec.id = head[0];
    if (rec.id.empty()) throw line_error(1, "empty record id");
    rec.sample_rate_hz = parse_number<int>(head[1], 1, "sample rate");
    if (rec.sample_rate_hz <= 0) throw line_error(1, "sample rate must be positive");
    const auto n_leads = parse_number<std::size_t>(head[2], 1, "lead count");
    const auto n_samples = parse_number<std::size_t>(head[3], 1, "sample count");
    rec.label_text = head[4];
    if (n_leads == 0) throw line_error(1, "lead count must be positive");

    ++line_no;
    if (!std::getline(is, line)) throw line_error(line_no, "missing lead names");
    rec.lead_names = split_csv(line, line_no);
    if (rec.lead_names.size() != n_leads)
        throw line_error(line_no, "expected " + std::to_string(n_leads) + " lead names, got " +
                                      std::to_string(rec.lead_names.size()));

    rec.samples.assign(n_leads, std::vector<double>(n_samples));
    for (std::size_t t = 0; t < n_samples; ++t) {
        ++line_no;
        if (!std::getline(is, line))
            throw line_error(line_no, "expected " + std::to_string(n_samples) + " sample rows, got " +
                                          std::to_string(t));
        std::string_view rest = line;
        std::size_t lead = 0;
        while (true) {
            const std::size_t comma = rest.find(',');
            std::string_view cell = trim(rest.substr(0, comma));
            if (lead >= n_leads) {
                lead = n_leads + 1;
                break;
            }
            rec.samples[lead][t] = parse_number<double>(cell, line_no, "sample");
            ++lead;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (lead != n_leads)
            throw line_error(line_no, "ragged row: expected " + std::to_string(n_leads) + " values");
    }
    while (std::getline(is, line)) {
        ++line_no;
        if (!trim(line).empty()) throw line_error(line_no, "unexpected data after last sample row");
    }
    if (!trim(rec.label_text).empty()) rec.label = map_label(rec.label_text);
    return rec;
}

void write_record(std::ostream& os, const EcgRecord& rec) {
    os << quote_if_needed(rec.id) << ',' << rec.sample_rate_hz << ',' << rec.n_leads() << ',' << rec.n_samples()
       << ',' << quote_if_needed(rec.label_text) << '\n';
    for (std::size_t l = 0; l < rec.lead_names.size(); ++l) os << (l ? "," : "") << quote_if_needed(rec.lead_names[l]);
    os << '\n';
    char buf[64];
    std::string row;
    for (std::size_t t = 0; t < rec.n_samples(); ++t) {
        row.clear();
        for (std::size_t l = 0; l < rec.n_leads(); ++l) {
            if (l) row += ',';
            auto res = std::to_chars(buf, buf + sizeof buf, rec.samples[l][t]);
            row.append(buf, res.ptr);
        }
        row += '\n';
        os << row;
    }
}

EcgRecord read_record_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open record '" + path.string() + "'");
    try {
        return parse_record(is);
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_record_file(const std::filesystem::path& path, const EcgRecord& rec) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    write_record(os, rec);
    if (!os) throw Error("write failed for '" + path.string() + "'");
}

FilterResult filter_valid(std::vector<EcgRecord> records, double min_seconds) {
    FilterResult out;
    for (auto& rec : records) {
        std::string reason;
        if (rec.sample_rate_hz <= 0) {
            reason = "invalid";
        } else if (rec.duration_seconds() < min_seconds) {
            reason = "too short";
        } else {
            for (const auto& row : rec.samples) {
                if (row.size() != rec.n_samples() ||
                    !std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
                    reason = "invalid";
                    break;
                }
            }
            if (reason.empty()) {
                for (const auto& lead : kCanonicalLeads)
                    if (std::find(rec.lead_names.begin(), rec.lead_names.end(), lead) == rec.lead_names.end()) {
                        reason = "missing lead " + lead;
                        break;
                    }
            }
        }
        if (reason.empty()) out.kept.push_back(std::move(rec));
        else out.rejected.push_back({rec.id, reason});
    }
    return out;
}

int map_label(std::string_view label_text) {
    const std::string s = normalize_label(label_text);
    if (s.empty()) throw Error("missing label");
    return (s == "normal electrocardiogram" || s == "normal sinus rhythm") ? 0 : 1;
}

EcgRecord downsample(const EcgRecord& rec, int target_hz) {
    if (target_hz <= 0 || rec.sample_rate_hz <= 0 || rec.sample_rate_hz % target_hz != 0)
        throw Error("cannot downsample " + std::to_string(rec.sample_rate_hz) + " Hz to " +
                    std::to_string(target_hz) + " Hz: non-integer ratio");
    const std::size_t k = static_cast<std::size_t>(rec.sample_rate_hz / target_hz);
    EcgRecord out = rec;
    out.sample_rate_hz = target_hz;
    for (auto& row : out.samples) {
        std::vector<double> kept;
        kept.reserve((row.size() + k - 1) / k);
        for (std::size_t i = 0; i < row.size(); i += k) kept.push_back(row[i]);
        row = std::move(kept);
    }
    return out;
}

EcgRecord select_leads(const EcgRecord& rec, std::span<const std::string> order) {
    EcgRecord out = rec;
    out.lead_names.assign(order.begin(), order.end());
    out.samples.clear();
    for (const auto& name : order) {
        auto it = std::find(rec.lead_names.begin(), rec.lead_names.end(), name);
        if (it == rec.lead_names.end()) throw Error("missing lead " + name);
        out.samples.push_back(rec.samples[static_cast<std::size_t>(it - rec.lead_names.begin())]);
    }
    return out;
}

Tensor window(const EcgRecord& rec, double seconds) {
    const double exact = seconds * rec.sample_rate_hz;
    const auto len = static_cast<std::size_t>(std::llround(exact));
    if (rec.n_leads() == 0) throw Error("record has no leads");
    if (rec.n_samples() < len)
        throw Error("record '" + rec.id + "' too short for a " + std::to_string(len) + "-sample window");
    Tensor out(Shape{rec.n_leads(), len});
    for (std::size_t l = 0; l < rec.n_leads(); ++l)
        std::copy_n(rec.samples[l].begin(), len, out.data.begin() + static_cast<std::ptrdiff_t>(l * len));
    return out;
}

std::vector<std::string> FoldPlan::fold_ids(std::size_t f) const {
    std::vector<std::string> out;
    for (const auto& [id, fold] : assignments)
        if (fold == f) out.push_back(id);
    return out;
}

FoldPlan make_folds(std::span<const LabeledId> ids, std::uint64_t seed, std::size_t n_folds) {
    if (n_folds < 2) throw Error("need at least 2 folds");
    std::vector<std::string> normal, abnormal;
    for (const auto& item : ids) {
        if (item.label == 0) normal.push_back(item.id);
        else if (item.label == 1) abnormal.push_back(item.id);
        else throw Error("label must be 0 or 1 for '" + item.id + "'");
    }
    if (normal.size() < n_folds || abnormal.size() < n_folds)
        throw Error("fewer than " + std::to_string(n_folds) + " samples in a class (normal " +
                    std::to_string(normal.size()) + ", abnormal " + std::to_string(abnormal.size()) + ")");

    FoldPlan plan;
    plan.seed = seed;
    plan.n_folds = n_folds;
    std::mt19937_64 rng(seed);
    std::shuffle(normal.begin(), normal.end(), rng);
    std::shuffle(abnormal.begin(), abnormal.end(), rng);
    const std::size_t keep = std::min(normal.size(), abnormal.size());
    for (auto* cls : {&normal, &abnormal}) {
        for (std::size_t i = keep; i < cls->size(); ++i) plan.excluded.push_back((*cls)[i]);
        cls->resize(keep);
    }
    std::sort(plan.excluded.begin(), plan.excluded.end());
    for (std::size_t i = 0; i < keep; ++i) {
        if (!plan.assignments.emplace(normal[i], i % n_folds).second ||
            !plan.assignments.emplace(abnormal[i], i % n_folds).second)
            throw Error("duplicate record id in fold input");
    }
    return plan;
}

PreprocessConfig PreprocessConfig::profile(std::string_view name) {
    PreprocessConfig cfg;
    if (name == "paper") return cfg;
    if (name == "mini") {
        cfg.target_hz = 25;
        return cfg;
    }
    throw Error("unknown profile '" + std::string(name) + "'");
}

Tensor Dataset::batch(std::span<const std::size_t> indices, std::optional<std::size_t> lead) const {
    if (indices.empty()) throw Error("empty batch");
    const Tensor& first = inputs.at(indices[0]);
    const std::size_t leads = first.shape[0], time = first.shape[1];
    const std::size_t rows = lead ? 1 : leads;
    if (lead && *lead >= leads) throw Error("lead index out of range");
    Tensor out(Shape{indices.size(), rows, time});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const Tensor& x = inputs.at(indices[b]);
        if (x.shape != first.shape) throw Error("dataset examples have mismatched shapes");
        const std::size_t src = lead ? *lead * time : 0;
        std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(src), rows * time,
                    out.data.begin() + static_cast<std::ptrdiff_t>(b * rows * time));
    }
    return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

PreprocessResult preprocess(const std::vector<EcgRecord>& records, const PreprocessConfig& cfg) {
    PreprocessResult out;
    FilterResult filtered = filter_valid(records, cfg.min_seconds);
    out.rejected = std::move(filtered.rejected);
    for (const auto& rec : filtered.kept) {
        int label = 0;
        try {
            label = map_label(rec.label_text);
        } catch (const Error& e) {
            out.rejected.push_back({rec.id, e.what()});
            continue;
        }
        try {
            EcgRecord r = select_leads(downsample(rec, cfg.target_hz));
            out.data.inputs.push_back(window(r, cfg.window_s));
        } catch (const Error& e) {
            out.rejected.push_back({rec.id, e.what()});
            continue;
        }
        out.data.ids.push_back(rec.id);
        out.data.labels.push_back(label);
    }
    return out;
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream is(manifest);
    if (!is) throw Error("cannot open manifest '" + manifest.string() + "'");
    std::vector<std::filesystem::path> out;
    std::string line;
    const auto base = manifest.parent_path();
    while (std::getline(is, line)) {
        const auto entry = trim(line);
        if (entry.empty() || entry.front() == '#') continue;
        std::filesystem::path p{std::string(entry)};
        out.push_back(p.is_absolute() ? p : base / p);
    }
    return out;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<std::string>& entries) {
    std::ofstream os(manifest, std::ios::trunc);
    if (!os) throw Error("cannot write '" + manifest.string() + "'");
    for (const auto& e : entries) os << e << '\n';
    if (!os) throw Error("write failed for '" + manifest.string() + "'");
}

void save_cache(const Dataset& data, const std::filesystem::path& path) {
    TensorArchive a;
    a.meta = "kind=cache\ncount=" + std::to_string(data.size()) + "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        a.tensors.emplace_back(data.ids[i], data.inputs[i]);
        a.tensors.emplace_back(data.ids[i] + "#label", Tensor::scalar(data.labels[i]));
    }
    a.save(path);
}

Dataset load_cache(const std::filesystem::path& path) {
    TensorArchive a = TensorArchive::load(path);
    if (a.meta.rfind("kind=cache\n", 0) != 0) throw Error("'" + path.string() + "' is not a preprocessed cache");
    if (a.tensors.size() % 2 != 0) throw Error("corrupt cache '" + path.string() + "'");
    Dataset d;
    for (std::size_t i = 0; i < a.tensors.size(); i += 2) {
        auto& [id, x] = a.tensors[i];
        const auto& [label_name, label] = a.tensors[i + 1];
        if (label_name != id + "#label" || label.size() != 1) throw Error("corrupt cache '" + path.string() + "'");
        d.ids.push_back(id);
        d.inputs.push_back(std::move(x));
        d.labels.push_back(static_cast<int>(label[0]));
    }
    return d;
}

std::optional<std::size_t> lead_index(std::string_view name) {
    for (std::size_t i = 0; i < kCanonicalLeads.size(); ++i)
        if (kCanonicalLeads[i] == name) return i;
    return std::nullopt;
}

}  // namespace mbcr
