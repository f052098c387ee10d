#include "steer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace steer {

using nlohmann::json;
using nlohmann::ordered_json;

double map_ordinal(int option_index, int option_count) {
    if (option_count < 2)
        fail(ErrorCategory::invalid_question,
             "ordinal mapping needs at least 2 options, got " + std::to_string(option_count));
    if (option_index < 0 || option_index >= option_count)
        fail(ErrorCategory::invalid_response,
             "option index " + std::to_string(option_index) + " out of range for " +
                 std::to_string(option_count) + " options");
    return static_cast<double>(option_index) / static_cast<double>(option_count - 1);
}

int nearest_option(double value, int option_count) {
    if (option_count < 2)
        fail(ErrorCategory::invalid_question, "nearest_option needs at least 2 options");
    int idx = static_cast<int>(std::lround(value * (option_count - 1)));
    return std::clamp(idx, 0, option_count - 1);
}

// ---------------------------------------------------------------------------
// ResponseMatrix
// ---------------------------------------------------------------------------

ResponseMatrix ResponseMatrix::build(std::vector<Question> questions,
                                     std::vector<Individual> individuals,
                                     const std::vector<RawResponse>& raw) {
    ResponseMatrix m;
    m.questions_ = std::move(questions);
    m.individuals_ = std::move(individuals);

    for (size_t i = 0; i < m.questions_.size(); ++i) {
        const Question& q = m.questions_[i];
        if (q.option_count() < 2)
            fail(ErrorCategory::invalid_question,
                 "question '" + q.id + "' has fewer than 2 options");
        std::set<std::string> distinct(q.options.begin(), q.options.end());
        if (distinct.size() != q.options.size())
            fail(ErrorCategory::invalid_question,
                 "question '" + q.id + "' has duplicate option labels");
        if (!m.question_index_.emplace(q.id, static_cast<int>(i)).second)
            fail(ErrorCategory::invalid_question, "duplicate question id '" + q.id + "'");
    }
    for (size_t i = 0; i < m.individuals_.size(); ++i) {
        if (!m.individual_index_.emplace(m.individuals_[i].id, static_cast<int>(i)).second)
            fail(ErrorCategory::referential_integrity,
                 "duplicate individual id '" + m.individuals_[i].id + "'");
    }

    m.responses_.reserve(raw.size());
    for (const RawResponse& r : raw) {
        auto qi = m.question_index_.find(r.question_id);
        if (qi == m.question_index_.end())
            fail(ErrorCategory::referential_integrity,
                 "response references unknown question id '" + r.question_id + "'");
        auto ii = m.individual_index_.find(r.individual_id);
        if (ii == m.individual_index_.end())
            fail(ErrorCategory::referential_integrity,
                 "response references unknown individual id '" + r.individual_id + "'");
        const Question& q = m.questions_[static_cast<size_t>(qi->second)];
        Response resp;
        resp.key = ResponseKey{ii->second, qi->second};
        resp.option_index = r.option_index;
        resp.value = map_ordinal(r.option_index, q.option_count());
        m.responses_.push_back(resp);
    }

    std::sort(m.responses_.begin(), m.responses_.end(),
              [](const Response& a, const Response& b) { return a.key < b.key; });
    for (size_t i = 0; i < m.responses_.size(); ++i) {
        if (!m.response_index_.emplace(pack(m.responses_[i].key), i).second) {
            const Response& r = m.responses_[i];
            fail(ErrorCategory::duplicate_response,
                 "duplicate response for (" + m.individuals_[static_cast<size_t>(r.key.individual)].id +
                     ", " + m.questions_[static_cast<size_t>(r.key.question)].id + ")");
        }
    }
    return m;
}

int ResponseMatrix::question_index(const std::string& id) const {
    auto it = question_index_.find(id);
    return it == question_index_.end() ? -1 : it->second;
}

int ResponseMatrix::individual_index(const std::string& id) const {
    auto it = individual_index_.find(id);
    return it == individual_index_.end() ? -1 : it->second;
}

bool ResponseMatrix::has(ResponseKey key) const {
    return response_index_.count(pack(key)) > 0;
}

const Response& ResponseMatrix::at(ResponseKey key) const {
    auto it = response_index_.find(pack(key));
    if (it == response_index_.end())
        fail(ErrorCategory::lookup, "no response stored for key (" +
                                        std::to_string(key.individual) + "," +
                                        std::to_string(key.question) + ")");
    return responses_[it->second];
}

std::vector<ResponseKey> ResponseMatrix::all_keys() const {
    std::vector<ResponseKey> keys;
    keys.reserve(responses_.size());
    for (const Response& r : responses_) keys.push_back(r.key);
    return keys;
}

// ---------------------------------------------------------------------------
// File loading
// ---------------------------------------------------------------------------
namespace {

std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    if (quoted) fail(ErrorCategory::parse, where + ": unterminated quote");
    fields.push_back(cur);
    return fields;
}

int parse_int_field(const std::string& s, const std::string& where) {
    try {
        size_t pos = 0;
        int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        fail(ErrorCategory::parse, where + ": expected integer, got '" + s + "'");
    }
}

}  // namespace

ResponseMatrix load_dataset(const std::string& questions_path,
                            const std::string& responses_path,
                            const std::string& demographics_path,
                            const LoadOptions& options) {
    // Questions: JSON lines. Refusal options are removed up front; the
    // remaining options are re-indexed so values stay uniform on [0,1].
    std::ifstream qin(questions_path);
    if (!qin) fail(ErrorCategory::io, "cannot open questions file: " + questions_path);

    std::vector<Question> questions;
    // per question: original option index -> kept index, or -1 when dropped
    std::unordered_map<std::string, std::vector<int>> option_remap;

    std::string line;
    int line_no = 0;
    auto is_refusal = [&](const std::string& label) {
        return std::find(options.refusal_labels.begin(), options.refusal_labels.end(), label) !=
               options.refusal_labels.end();
    };
    while (std::getline(qin, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(ErrorCategory::parse,
                 questions_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("options"))
            fail(ErrorCategory::parse, questions_path + ":" + std::to_string(line_no) +
                                           ": question object needs 'id' and 'options'");
        Question q;
        q.id = j.at("id").get<std::string>();
        q.text = j.value("text", "");
        q.topic = j.value("topic", "");
        std::vector<int> remap;
        for (const auto& opt : j.at("options")) {
            std::string label = opt.get<std::string>();
            if (is_refusal(label)) {
                remap.push_back(-1);
            } else {
                remap.push_back(q.option_count());
                q.options.push_back(label);
            }
        }
        if (q.option_count() < 2)
            fail(ErrorCategory::invalid_question,
                 questions_path + ":" + std::to_string(line_no) + ": question '" + q.id +
                     "' has fewer than 2 non-refusal options");
        option_remap[q.id] = std::move(remap);
        questions.push_back(std::move(q));
    }
    if (questions.empty())
        fail(ErrorCategory::invalid_input, "questions file is empty: " + questions_path);

    // Demographics first: they introduce individuals even without responses.
    std::map<std::string, Individual> individuals_by_id;
    {
        std::ifstream din(demographics_path);
        if (!din) fail(ErrorCategory::io, "cannot open demographics file: " + demographics_path);
        line_no = 0;
        while (std::getline(din, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            auto fields = split_csv_line(line, demographics_path + ":" + std::to_string(line_no));
            if (line_no == 1) {
                if (fields.size() != 3 || fields[0] != "individual_id")
                    fail(ErrorCategory::parse, demographics_path +
                                                   ": expected header individual_id,trait,category");
                continue;
            }
            if (fields.size() != 3)
                fail(ErrorCategory::parse, demographics_path + ":" + std::to_string(line_no) +
                                               ": expected 3 fields, got " +
                                               std::to_string(fields.size()));
            Individual& ind = individuals_by_id[fields[0]];
            ind.id = fields[0];
            ind.demographics[fields[1]] = fields[2];
        }
    }

    // Responses.
    std::vector<ResponseMatrix::RawResponse> raw;
    {
        std::ifstream rin(responses_path);
        if (!rin) fail(ErrorCategory::io, "cannot open responses file: " + responses_path);
        line_no = 0;
        while (std::getline(rin, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            auto fields = split_csv_line(line, responses_path + ":" + std::to_string(line_no));
            if (line_no == 1) {
                if (fields.size() != 3 || fields[0] != "individual_id")
                    fail(ErrorCategory::parse,
                         responses_path + ": expected header individual_id,question_id,option_index");
                continue;
            }
            if (fields.size() != 3)
                fail(ErrorCategory::parse, responses_path + ":" + std::to_string(line_no) +
                                               ": expected 3 fields, got " +
                                               std::to_string(fields.size()));
            const std::string& ind_id = fields[0];
            const std::string& q_id = fields[1];
            int orig_index = parse_int_field(fields[2], responses_path + ":" + std::to_string(line_no));

            auto remap_it = option_remap.find(q_id);
            if (remap_it == option_remap.end())
                fail(ErrorCategory::referential_integrity,
                     responses_path + ":" + std::to_string(line_no) +
                         ": unknown question id '" + q_id + "'");
            const std::vector<int>& remap = remap_it->second;
            if (orig_index < 0 || orig_index >= static_cast<int>(remap.size()))
                fail(ErrorCategory::invalid_response,
                     responses_path + ":" + std::to_string(line_no) + ": option index " +
                         std::to_string(orig_index) + " out of range for question '" + q_id + "'");
            int kept = remap[static_cast<size_t>(orig_index)];
            if (kept < 0) continue;  // refusal: treated as null

            Individual& ind = individuals_by_id[ind_id];  // responses introduce individuals too
            ind.id = ind_id;
            raw.push_back({ind_id, q_id, kept});
        }
    }

    std::vector<Individual> individuals;
    individuals.reserve(individuals_by_id.size());
    for (auto& [id, ind] : individuals_by_id) individuals.push_back(std::move(ind));

    return ResponseMatrix::build(std::move(questions), std::move(individuals), raw);
}

void save_dataset_files(const ResponseMatrix& matrix,
                        const std::string& questions_path,
                        const std::string& responses_path,
                        const std::string& demographics_path) {
    {
        std::ofstream out(questions_path);
        if (!out) fail(ErrorCategory::io, "cannot write " + questions_path);
        for (const Question& q : matrix.questions()) {
            ordered_json j;
            j["id"] = q.id;
            j["text"] = q.text;
            j["topic"] = q.topic;
            j["options"] = q.options;
            out << j.dump() << "\n";
        }
    }
    {
        std::ofstream out(responses_path);
        if (!out) fail(ErrorCategory::io, "cannot write " + responses_path);
        out << "individual_id,question_id,option_index\n";
        for (const Response& r : matrix.responses()) {
            out << matrix.individual(r.key.individual).id << ","
                << matrix.question(r.key.question).id << "," << r.option_index << "\n";
        }
    }
    {
        std::ofstream out(demographics_path);
        if (!out) fail(ErrorCategory::io, "cannot write " + demographics_path);
        out << "individual_id,trait,category\n";
        for (const Individual& ind : matrix.individuals()) {
            for (const auto& [trait, category] : ind.demographics)
                out << ind.id << "," << trait << "," << category << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Four-way split
// ---------------------------------------------------------------------------

FourWaySplit four_way_split(const ResponseMatrix& matrix, const SplitSpec& spec) {
    if (spec.individual_train_fraction <= 0.0 || spec.individual_train_fraction >= 1.0 ||
        spec.response_train_fraction <= 0.0 || spec.response_train_fraction >= 1.0)
        fail(ErrorCategory::config, "split fractions must lie strictly in (0,1)");
    if (matrix.response_count() == 0)
        fail(ErrorCategory::invalid_input, "cannot split an empty response matrix");

    const int n = static_cast<int>(matrix.individuals().size());

    // Lexicographic id order first, then one seeded shuffle.
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return matrix.individual(a).id < matrix.individual(b).id;
    });
    Rng rng(mix_seed(spec.seed, "individual-shuffle"));
    std::shuffle(order.begin(), order.end(), rng);

    const int n_val = floor_fraction_count(n, 1.0 - spec.individual_train_fraction);
    const int n_tr = n - n_val;  // remainder lands on the training side
    if (n_tr <= 0 || n_val <= 0)
        fail(ErrorCategory::degenerate_split,
             "individual partition would be empty (n=" + std::to_string(n) + ")");

    FourWaySplit split;
    split.p_tr.assign(order.begin(), order.begin() + n_tr);
    split.p_val.assign(order.begin() + n_tr, order.end());
    std::sort(split.p_tr.begin(), split.p_tr.end());
    std::sort(split.p_val.begin(), split.p_val.end());

    std::vector<bool> in_train(static_cast<size_t>(n), false);
    for (int idx : split.p_tr) in_train[static_cast<size_t>(idx)] = true;

    // Per-individual response partition; the sub-stream is derived from the
    // individual id so the result does not depend on iteration order.
    std::vector<std::vector<ResponseKey>> per_individual(static_cast<size_t>(n));
    for (const Response& r : matrix.responses())
        per_individual[static_cast<size_t>(r.key.individual)].push_back(r.key);

    for (int i = 0; i < n; ++i) {
        auto& keys = per_individual[static_cast<size_t>(i)];
        if (keys.empty()) continue;
        std::sort(keys.begin(), keys.end(), [&](ResponseKey a, ResponseKey b) {
            return matrix.question(a.question).id < matrix.question(b.question).id;
        });
        Rng local(mix_seed(spec.seed, matrix.individual(i).id));
        std::shuffle(keys.begin(), keys.end(), local);

        const int r = static_cast<int>(keys.size());
        const int r_val = floor_fraction_count(r, 1.0 - spec.response_train_fraction);
        const int r_tr = r - r_val;

        auto& train_side = in_train[static_cast<size_t>(i)] ? split.r_tr_tr : split.r_val_tr;
        auto& val_side = in_train[static_cast<size_t>(i)] ? split.r_tr_val : split.r_val_val;
        train_side.insert(train_side.end(), keys.begin(), keys.begin() + r_tr);
        val_side.insert(val_side.end(), keys.begin() + r_tr, keys.end());
    }

    for (auto* keys : {&split.r_tr_tr, &split.r_tr_val, &split.r_val_tr, &split.r_val_val})
        std::sort(keys->begin(), keys->end());

    auto require_nonempty = [](const std::vector<ResponseKey>& keys, const char* name) {
        if (keys.empty())
            fail(ErrorCategory::degenerate_split,
                 std::string("response partition ") + name + " would be empty");
    };
    require_nonempty(split.r_tr_tr, "r_tr_tr");
    require_nonempty(split.r_tr_val, "r_tr_val");
    require_nonempty(split.r_val_tr, "r_val_tr");
    require_nonempty(split.r_val_val, "r_val_val");
    return split;
}

namespace {

json keys_to_json(const std::vector<ResponseKey>& keys, const ResponseMatrix& matrix) {
    json arr = json::array();
    for (ResponseKey k : keys)
        arr.push_back({matrix.individual(k.individual).id, matrix.question(k.question).id});
    return arr;
}

std::vector<ResponseKey> keys_from_json(const json& arr, const ResponseMatrix& matrix,
                                        const std::string& where) {
    std::vector<ResponseKey> keys;
    keys.reserve(arr.size());
    for (const auto& pair : arr) {
        int ind = matrix.individual_index(pair.at(0).get<std::string>());
        int q = matrix.question_index(pair.at(1).get<std::string>());
        if (ind < 0 || q < 0)
            fail(ErrorCategory::referential_integrity,
                 where + ": split references ids missing from the dataset");
        keys.push_back(ResponseKey{ind, q});
    }
    return keys;
}

}  // namespace

void save_split(const std::string& path, const FourWaySplit& split,
                const SplitSpec& spec, const ResponseMatrix& matrix,
                const std::string& dataset_hash) {
    ordered_json j;
    j["format"] = "split-v1";
    j["dataset_hash"] = dataset_hash;
    j["spec"] = {{"seed", spec.seed},
                 {"individual_train_fraction", spec.individual_train_fraction},
                 {"response_train_fraction", spec.response_train_fraction}};
    json p_tr = json::array(), p_val = json::array();
    for (int i : split.p_tr) p_tr.push_back(matrix.individual(i).id);
    for (int i : split.p_val) p_val.push_back(matrix.individual(i).id);
    j["p_tr"] = p_tr;
    j["p_val"] = p_val;
    j["r_tr_tr"] = keys_to_json(split.r_tr_tr, matrix);
    j["r_tr_val"] = keys_to_json(split.r_tr_val, matrix);
    j["r_val_tr"] = keys_to_json(split.r_val_tr, matrix);
    j["r_val_val"] = keys_to_json(split.r_val_val, matrix);

    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << j.dump(2) << "\n";
}

LoadedSplit load_split(const std::string& path, const ResponseMatrix& matrix) {
    std::ifstream in(path);
    if (!in) fail(ErrorCategory::io, "cannot open split file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCategory::parse, path + ": " + e.what());
    }
    if (j.value("format", "") != "split-v1")
        fail(ErrorCategory::incompatibility, path + ": unsupported split format");

    LoadedSplit out;
    out.dataset_hash = j.value("dataset_hash", "");
    out.spec.seed = j.at("spec").at("seed").get<uint64_t>();
    out.spec.individual_train_fraction = j.at("spec").at("individual_train_fraction").get<double>();
    out.spec.response_train_fraction = j.at("spec").at("response_train_fraction").get<double>();
    for (const auto& id : j.at("p_tr")) {
        int idx = matrix.individual_index(id.get<std::string>());
        if (idx < 0) fail(ErrorCategory::referential_integrity, path + ": unknown individual id");
        out.split.p_tr.push_back(idx);
    }
    for (const auto& id : j.at("p_val")) {
        int idx = matrix.individual_index(id.get<std::string>());
        if (idx < 0) fail(ErrorCategory::referential_integrity, path + ": unknown individual id");
        out.split.p_val.push_back(idx);
    }
    std::sort(out.split.p_tr.begin(), out.split.p_tr.end());
    std::sort(out.split.p_val.begin(), out.split.p_val.end());
    out.split.r_tr_tr = keys_from_json(j.at("r_tr_tr"), matrix, path);
    out.split.r_tr_val = keys_from_json(j.at("r_tr_val"), matrix, path);
    out.split.r_val_tr = keys_from_json(j.at("r_val_tr"), matrix, path);
    out.split.r_val_val = keys_from_json(j.at("r_val_val"), matrix, path);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_individuals < 1 || spec.n_questions < 1 || spec.n_latent_clusters < 1 ||
        spec.latent_dim < 1)
        fail(ErrorCategory::invalid_input, "synthetic counts must all be >= 1");
    if (spec.noise < 0.0) fail(ErrorCategory::invalid_input, "noise must be >= 0");
    if (spec.min_options < 2 || spec.max_options < spec.min_options)
        fail(ErrorCategory::invalid_input, "option count range must satisfy 2 <= min <= max");

    Rng rng(mix_seed(spec.seed, "synthetic"));
    std::normal_distribution<double> unit_normal(0.0, 1.0);

    SyntheticGroundTruth truth;
    truth.prototypes.resize(static_cast<size_t>(spec.n_latent_clusters));
    for (auto& proto : truth.prototypes) {
        proto.resize(static_cast<size_t>(spec.latent_dim));
        for (double& x : proto) x = unit_normal(rng);
    }

    // Balanced assignment keeps the planted clusters comparable in size.
    truth.cluster_of.resize(static_cast<size_t>(spec.n_individuals));
    truth.latents.resize(static_cast<size_t>(spec.n_individuals));
    for (int i = 0; i < spec.n_individuals; ++i) {
        int c = i % spec.n_latent_clusters;
        truth.cluster_of[static_cast<size_t>(i)] = c;
        auto& latent = truth.latents[static_cast<size_t>(i)];
        latent = truth.prototypes[static_cast<size_t>(c)];
        double spread = spec.cluster_spread_ratio * spec.noise;
        for (double& x : latent) x += spread * unit_normal(rng);
    }

    truth.question_latents.resize(static_cast<size_t>(spec.n_questions));
    for (auto& qv : truth.question_latents) {
        qv.resize(static_cast<size_t>(spec.latent_dim));
        for (double& x : qv) x = unit_normal(rng);
    }

    auto pad_number = [](int value, int width) {
        std::string s = std::to_string(value);
        while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
        return s;
    };
    int ind_width = static_cast<int>(std::to_string(spec.n_individuals - 1).size());
    int q_width = static_cast<int>(std::to_string(spec.n_questions - 1).size());

    std::vector<Question> questions(static_cast<size_t>(spec.n_questions));
    int option_span = spec.max_options - spec.min_options + 1;
    for (int jq = 0; jq < spec.n_questions; ++jq) {
        Question& q = questions[static_cast<size_t>(jq)];
        q.id = "q-" + pad_number(jq, q_width);
        q.text = "synthetic question " + std::to_string(jq);
        q.topic = "topic-" + std::to_string(jq % 5);
        int m = spec.min_options + (jq % option_span);
        for (int o = 0; o < m; ++o) q.options.push_back("option-" + std::to_string(o));
    }

    // Two demographic traits: "cohort" mirrors the planted cluster,
    // "random_group" is independent of it.
    std::vector<Individual> individuals(static_cast<size_t>(spec.n_individuals));
    std::uniform_int_distribution<int> group_pick(0, std::max(1, spec.n_latent_clusters) - 1);
    for (int i = 0; i < spec.n_individuals; ++i) {
        Individual& ind = individuals[static_cast<size_t>(i)];
        ind.id = "ind-" + pad_number(i, ind_width);
        ind.demographics["cohort"] =
            "c" + std::to_string(truth.cluster_of[static_cast<size_t>(i)]);
        ind.demographics["random_group"] = "g" + std::to_string(group_pick(rng));
    }

    // Raw scores, then per-question min-max rescale over the population so
    // every question spans the full ordinal range.
    std::vector<std::vector<double>> scores(
        static_cast<size_t>(spec.n_individuals),
        std::vector<double>(static_cast<size_t>(spec.n_questions)));
    for (int i = 0; i < spec.n_individuals; ++i)
        for (int jq = 0; jq < spec.n_questions; ++jq)
            scores[static_cast<size_t>(i)][static_cast<size_t>(jq)] =
                dot(truth.latents[static_cast<size_t>(i)],
                    truth.question_latents[static_cast<size_t>(jq)]);

    std::vector<ResponseMatrix::RawResponse> raw;
    raw.reserve(static_cast<size_t>(spec.n_individuals) * static_cast<size_t>(spec.n_questions));
    for (int jq = 0; jq < spec.n_questions; ++jq) {
        double lo = scores[0][static_cast<size_t>(jq)], hi = lo;
        for (int i = 1; i < spec.n_individuals; ++i) {
            double s = scores[static_cast<size_t>(i)][static_cast<size_t>(jq)];
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        double range = hi - lo;
        const Question& q = questions[static_cast<size_t>(jq)];
        for (int i = 0; i < spec.n_individuals; ++i) {
            double v = range > 0.0
                           ? (scores[static_cast<size_t>(i)][static_cast<size_t>(jq)] - lo) / range
                           : 0.5;
            v = std::clamp(v, 0.0, 1.0) + spec.noise * unit_normal(rng);
            raw.push_back({individuals[static_cast<size_t>(i)].id, q.id,
                           nearest_option(v, q.option_count())});
        }
    }

    SyntheticData out;
    out.matrix = ResponseMatrix::build(std::move(questions), std::move(individuals), raw);
    out.truth = std::move(truth);
    return out;
}

void save_ground_truth(const std::string& path, const SyntheticGroundTruth& truth,
                       const ResponseMatrix& matrix) {
    ordered_json j;
    j["format"] = "ground-truth-v1";
    json clusters = json::object();
    for (size_t i = 0; i < truth.cluster_of.size(); ++i)
        clusters[matrix.individual(static_cast<int>(i)).id] = truth.cluster_of[i];
    j["cluster_of"] = clusters;
    json latents = json::object();
    for (size_t i = 0; i < truth.latents.size(); ++i)
        latents[matrix.individual(static_cast<int>(i)).id] = truth.latents[i];
    j["latents"] = latents;
    j["prototypes"] = truth.prototypes;
    json qlat = json::object();
    for (size_t i = 0; i < truth.question_latents.size(); ++i)
        qlat[matrix.question(static_cast<int>(i)).id] = truth.question_latents[i];
    j["question_latents"] = qlat;

    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace steer
