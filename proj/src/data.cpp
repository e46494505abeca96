#include "nmaout/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nmaout/errors.hpp"

namespace nmaout {

namespace {

std::string join_ids(const std::vector<TreatmentId>& ids) {
    std::string out = "{";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(ids[i]);
    }
    return out + "}";
}

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

int parse_int(const std::string& field, std::size_t line_no, const char* what) {
    int value = 0;
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw ValidationError("line " + std::to_string(line_no) + ": cannot parse " + what + " '" + field + "'");
    }
    return value;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// Builds studies from raw rows, assigning treatment indices from `order`.
struct RawArm {
    std::string study;
    std::string treatment;
    int events;
    int total;
    std::size_t line;
};

NetworkDataset assemble(const std::vector<RawArm>& rows, std::vector<std::string> labels) {
    std::map<std::string, TreatmentId> index;
    if (labels.empty()) {
        for (const auto& r : rows) {
            if (!index.contains(r.treatment)) {
                labels.push_back(r.treatment);
                index[r.treatment] = static_cast<TreatmentId>(labels.size());
            }
        }
    } else {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!index.emplace(labels[i], static_cast<TreatmentId>(i + 1)).second) {
                throw ValidationError("duplicate treatment label '" + labels[i] + "'");
            }
        }
    }

    std::vector<std::string> study_order;
    std::map<std::string, std::vector<Arm>> arms;
    std::set<std::pair<std::string, TreatmentId>> seen;
    for (const auto& r : rows) {
        const auto it = index.find(r.treatment);
        if (it == index.end()) {
            throw ValidationError("line " + std::to_string(r.line) + ": unknown treatment '" + r.treatment + "'");
        }
        if (r.events < 0 || r.total < 1 || r.events > r.total) {
            throw ValidationError("line " + std::to_string(r.line) + ": invalid counts events=" +
                                  std::to_string(r.events) + " total=" + std::to_string(r.total));
        }
        if (!seen.emplace(r.study, it->second).second) {
            throw ValidationError("line " + std::to_string(r.line) + ": duplicate row for study '" + r.study +
                                  "' treatment '" + r.treatment + "'");
        }
        if (!arms.contains(r.study)) study_order.push_back(r.study);
        arms[r.study].push_back(Arm{it->second, r.events, r.total});
    }

    std::vector<Study> studies;
    studies.reserve(study_order.size());
    for (const auto& id : study_order) studies.emplace_back(id, std::move(arms[id]));
    const int k = static_cast<int>(labels.size());
    return NetworkDataset(std::move(studies), k, std::move(labels));
}

}  // namespace

Study::Study(std::string id, std::vector<Arm> arms) : id_(std::move(id)), arms_(std::move(arms)) {
    if (arms_.size() < 2) throw ValidationError("study '" + id_ + "' has fewer than two arms");
    for (std::size_t i = 0; i < arms_.size(); ++i) {
        const auto& a = arms_[i];
        if (a.total < 1 || a.events < 0 || a.events > a.total) {
            throw ValidationError("study '" + id_ + "': invalid arm counts");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (arms_[j].treatment == a.treatment) {
                throw ValidationError("study '" + id_ + "': repeated treatment " + std::to_string(a.treatment));
            }
        }
        if (a.treatment < arms_[baseline_arm_].treatment) baseline_arm_ = i;
    }
}

bool Study::contains(TreatmentId t) const noexcept {
    return std::any_of(arms_.begin(), arms_.end(), [t](const Arm& a) { return a.treatment == t; });
}

ConnectivityResult connectivity_check(std::span<const Study> studies, int num_treatments) {
    ConnectivityResult result;
    if (num_treatments <= 0) return result;
    DisjointSets sets(static_cast<std::size_t>(num_treatments));
    for (const auto& s : studies) {
        const auto arms = s.arms();
        for (std::size_t j = 1; j < arms.size(); ++j) {
            sets.unite(static_cast<std::size_t>(arms[0].treatment - 1), static_cast<std::size_t>(arms[j].treatment - 1));
        }
    }
    std::map<std::size_t, std::vector<TreatmentId>> groups;
    for (int t = 1; t <= num_treatments; ++t) groups[sets.find(static_cast<std::size_t>(t - 1))].push_back(t);
    for (auto& [root, members] : groups) result.components.push_back(std::move(members));
    std::sort(result.components.begin(), result.components.end());
    result.connected = result.components.size() == 1;
    return result;
}

ConnectivityResult connectivity_check(const NetworkDataset& ds) {
    return connectivity_check(ds.studies(), ds.num_treatments());
}

NetworkDataset::NetworkDataset(std::vector<Study> studies, int num_treatments, std::vector<std::string> treatment_labels)
    : studies_(std::move(studies)), num_treatments_(num_treatments), labels_(std::move(treatment_labels)) {
    if (num_treatments_ < 1) throw ValidationError("network needs at least one treatment");
    if (labels_.empty()) {
        for (int t = 1; t <= num_treatments_; ++t) labels_.push_back(std::to_string(t));
    }
    if (labels_.size() != static_cast<std::size_t>(num_treatments_)) {
        throw ValidationError("treatment label count does not match K");
    }
    std::set<std::string> ids;
    for (const auto& s : studies_) {
        if (!ids.insert(s.id()).second) throw ValidationError("duplicate study id '" + s.id() + "'");
        for (const auto& a : s.arms()) {
            if (a.treatment < 1 || a.treatment > num_treatments_) {
                throw ValidationError("study '" + s.id() + "': treatment " + std::to_string(a.treatment) +
                                      " outside 1.." + std::to_string(num_treatments_));
            }
        }
    }
    const auto conn = connectivity_check(studies_, num_treatments_);
    if (!conn.connected) {
        std::string msg = "network is disconnected; components:";
        for (const auto& c : conn.components) msg += " " + join_ids(c);
        throw ValidationError(msg);
    }
}

std::size_t NetworkDataset::num_arms() const noexcept {
    std::size_t n = 0;
    for (const auto& s : studies_) n += s.num_arms();
    return n;
}

std::optional<std::size_t> NetworkDataset::find_study(std::string_view id) const noexcept {
    for (std::size_t i = 0; i < studies_.size(); ++i) {
        if (studies_[i].id() == id) return i;
    }
    return std::nullopt;
}

std::size_t NetworkDataset::study_index(std::string_view id) const {
    if (auto i = find_study(id)) return *i;
    throw ValidationError("unknown study '" + std::string(id) + "'");
}

std::optional<TreatmentId> NetworkDataset::find_treatment(std::string_view label) const noexcept {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == label) return static_cast<TreatmentId>(i + 1);
    }
    return std::nullopt;
}

NetworkDataset NetworkDataset::without(std::span<const std::size_t> excluded) const {
    std::vector<Study> kept;
    std::vector<Study> dropped;
    for (std::size_t i = 0; i < studies_.size(); ++i) {
        if (std::find(excluded.begin(), excluded.end(), i) != excluded.end()) {
            dropped.push_back(studies_[i]);
        } else {
            kept.push_back(studies_[i]);
        }
    }
    const auto conn = connectivity_check(kept, num_treatments_);
    if (!conn.connected) {
        std::vector<std::size_t> component_of(static_cast<std::size_t>(num_treatments_) + 1);
        for (std::size_t c = 0; c < conn.components.size(); ++c) {
            for (auto t : conn.components[c]) component_of[static_cast<std::size_t>(t)] = c;
        }
        std::set<std::pair<TreatmentId, TreatmentId>> broken;
        for (const auto& s : dropped) {
            const auto arms = s.arms();
            for (std::size_t a = 0; a < arms.size(); ++a) {
                for (std::size_t b = a + 1; b < arms.size(); ++b) {
                    auto h = arms[a].treatment;
                    auto k = arms[b].treatment;
                    if (component_of[static_cast<std::size_t>(h)] != component_of[static_cast<std::size_t>(k)]) {
                        broken.emplace(std::min(h, k), std::max(h, k));
                    }
                }
            }
        }
        std::string msg = "excluding the requested studies disconnects the network; broken comparisons:";
        for (const auto& [h, k] : broken) msg += " " + label(h) + " vs " + label(k);
        msg += "; components:";
        for (const auto& c : conn.components) msg += " " + join_ids(c);
        throw ValidationError(msg);
    }
    return NetworkDataset(std::move(kept), num_treatments_, labels_);
}

std::vector<double> ObservedProportions::pool() const {
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& e : values) out.push_back(e.x);
    return out;
}

ObservedProportions observed_proportions(const NetworkDataset& ds) {
    ObservedProportions out;
    out.values.reserve(ds.num_arms());
    for (const auto& s : ds.studies()) {
        for (const auto& a : s.arms()) {
            out.values.push_back({s.id(), a.treatment, static_cast<double>(a.events) / a.total});
        }
    }
    return out;
}

DataFormat format_from_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".json" ? DataFormat::json : DataFormat::csv;
}

NetworkDataset parse_dataset_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    std::vector<RawArm> rows;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (!header_seen) {
            if (fields != std::vector<std::string>{"study", "treatment", "events", "total"}) {
                throw ValidationError("expected CSV header 'study,treatment,events,total'");
            }
            header_seen = true;
            continue;
        }
        if (fields.size() != 4) {
            throw ValidationError("line " + std::to_string(line_no) + ": expected 4 fields, found " +
                                  std::to_string(fields.size()));
        }
        if (fields[0].empty() || fields[1].empty()) {
            throw ValidationError("line " + std::to_string(line_no) + ": empty study or treatment");
        }
        rows.push_back({fields[0], fields[1], parse_int(fields[2], line_no, "events"),
                        parse_int(fields[3], line_no, "total"), line_no});
    }
    if (!header_seen) throw ValidationError("empty CSV input");
    if (rows.empty()) throw ValidationError("CSV has no data rows");
    return assemble(rows, {});
}

NetworkDataset parse_dataset_json(std::string_view text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("JSON parse failure: ") + e.what());
    }
    try {
        std::vector<std::string> labels;
        if (doc.contains("treatments")) {
            for (const auto& t : doc.at("treatments")) {
                labels.push_back(t.is_string() ? t.get<std::string>() : t.dump());
            }
        }
        std::vector<RawArm> rows;
        std::size_t item = 0;
        for (const auto& s : doc.at("studies")) {
            const std::string id = s.at("id").is_string() ? s.at("id").get<std::string>() : s.at("id").dump();
            for (const auto& a : s.at("arms")) {
                ++item;
                const auto& t = a.at("treatment");
                std::string label;
                if (t.is_string()) {
                    label = t.get<std::string>();
                } else if (!labels.empty() && t.is_number_integer()) {
                    const auto idx = t.get<long>();
                    if (idx < 1 || idx > static_cast<long>(labels.size())) {
                        throw ValidationError("study '" + id + "': treatment index out of range");
                    }
                    label = labels[static_cast<std::size_t>(idx - 1)];
                } else {
                    label = t.dump();
                }
                rows.push_back({id, label, a.at("events").get<int>(), a.at("total").get<int>(), item});
            }
        }
        if (rows.empty()) throw ValidationError("JSON dataset has no arms");
        return assemble(rows, std::move(labels));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed JSON dataset: ") + e.what());
    }
}

NetworkDataset load_dataset(const std::filesystem::path& path, DataFormat format) {
    const auto text = read_file(path);
    return format == DataFormat::csv ? parse_dataset_csv(text) : parse_dataset_json(text);
}

std::string dataset_to_csv(const NetworkDataset& ds) {
    std::string out = "study,treatment,events,total\n";
    for (const auto& s : ds.studies()) {
        for (const auto& a : s.arms()) {
            out += csv_escape(s.id()) + "," + csv_escape(ds.label(a.treatment)) + "," + std::to_string(a.events) +
                   "," + std::to_string(a.total) + "\n";
        }
    }
    return out;
}

std::string dataset_to_json(const NetworkDataset& ds) {
    nlohmann::ordered_json doc;
    doc["treatments"] = std::vector<std::string>(ds.treatment_labels().begin(), ds.treatment_labels().end());
    auto& studies = doc["studies"] = nlohmann::ordered_json::array();
    for (const auto& s : ds.studies()) {
        nlohmann::ordered_json js;
        js["id"] = s.id();
        auto& arms = js["arms"] = nlohmann::ordered_json::array();
        for (const auto& a : s.arms()) {
            arms.push_back({{"treatment", ds.label(a.treatment)}, {"events", a.events}, {"total", a.total}});
        }
        studies.push_back(std::move(js));
    }
    return doc.dump(2) + "\n";
}

void write_dataset(const NetworkDataset& ds, const std::filesystem::path& path, DataFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << (format == DataFormat::csv ? dataset_to_csv(ds) : dataset_to_json(ds));
}

}  // namespace nmaout
