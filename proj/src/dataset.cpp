#include "specenc/spectrum.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace specenc {

namespace {

std::string strip_cr(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
    return s;
}

}  // namespace

CsvError::CsvError(std::size_t row, const std::string& what)
    : ValidationError(fmt::format("labels CSV row {}: {}", row, what)), row_(row) {}

std::map<std::string, double> load_labels(std::istream& in) {
    std::map<std::string, double> labels;
    std::string line;
    std::size_t row = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++row;
        line = strip_cr(std::move(line));
        if (!header_seen) {
            // UTF-8 byte order mark
            if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
            if (line != "id,qed") throw CsvError(row, fmt::format("expected header 'id,qed', got '{}'", line));
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
            throw CsvError(row, "expected exactly two fields");
        }
        std::string id = line.substr(0, comma);
        const std::string value = line.substr(comma + 1);
        if (id.empty()) throw CsvError(row, "empty id");
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty()) {
            throw CsvError(row, fmt::format("non-numeric label '{}'", value));
        }
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw CsvError(row, fmt::format("label {} outside [0, 1]", value));
        }
        if (!labels.emplace(std::move(id), v).second) {
            throw CsvError(row, fmt::format("duplicate id '{}'", line.substr(0, comma)));
        }
    }
    if (!header_seen) throw CsvError(1, "missing header 'id,qed'");
    return labels;
}

std::map<std::string, double> load_labels_string(const std::string& text) {
    std::istringstream in(text);
    return load_labels(in);
}

DatasetSplit parse_splits_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(fmt::format("splits file is not valid JSON: {}", e.what()));
    }
    if (!j.is_object()) throw ValidationError("splits file must be a JSON object");
    auto read = [&](const char* key) {
        if (!j.contains(key)) throw ValidationError(fmt::format("splits file lacks '{}'", key));
        const auto& arr = j.at(key);
        if (!arr.is_array()) throw ValidationError(fmt::format("splits '{}' must be an array", key));
        std::vector<std::string> ids;
        for (const auto& e : arr) {
            if (!e.is_string()) throw ValidationError(fmt::format("splits '{}' holds a non-string id", key));
            ids.push_back(e.get<std::string>());
        }
        return ids;
    };
    return DatasetSplit{read("train"), read("val"), read("test")};
}

LabeledDataset assemble_dataset(const std::vector<Spectrum>& spectra,
                                const std::map<std::string, double>& labels,
                                const DatasetSplit& split) {
    std::unordered_map<std::string, const Spectrum*> by_id;
    for (const auto& s : spectra) {
        if (!by_id.emplace(s.id, &s).second) {
            throw ValidationError(fmt::format("duplicate spectrum id '{}'", s.id));
        }
    }

    std::unordered_map<std::string, const char*> owner;
    LabeledDataset out;
    auto take = [&](const std::vector<std::string>& ids, const char* name,
                    std::vector<Spectrum>& dst) {
        for (const auto& id : ids) {
            auto [it, fresh] = owner.emplace(id, name);
            if (!fresh) {
                throw ValidationError(
                    fmt::format("id '{}' appears in both '{}' and '{}' splits", id, it->second, name));
            }
            const auto s = by_id.find(id);
            if (s == by_id.end()) {
                throw ValidationError(fmt::format("split '{}' references unknown spectrum '{}'", name, id));
            }
            Spectrum copy = *s->second;
            if (const auto l = labels.find(id); l != labels.end()) {
                copy.label = l->second;
            } else if (!copy.label) {
                throw ValidationError(fmt::format("spectrum '{}' in split '{}' has no label", id, name));
            }
            if (*copy.label < 0.0 || *copy.label > 1.0) {
                throw ValidationError(fmt::format("label of '{}' outside [0, 1]", id));
            }
            dst.push_back(std::move(copy));
        }
    };
    take(split.train_ids, "train", out.train);
    take(split.val_ids, "val", out.val);
    take(split.test_ids, "test", out.test);
    return out;
}

}  // namespace specenc
