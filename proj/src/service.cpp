#include "rockseg/service.hpp"

#include "rockseg/clustering.hpp"
#include "rockseg/error.hpp"
#include "rockseg/render.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <random>
#include <set>
#include <thread>

namespace fs = std::filesystem;

namespace rockseg {

enum class JobState { queued, running, done, failed, cancelled };

namespace {

const char* to_string(JobState s) {
    switch (s) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
        case JobState::cancelled: return "cancelled";
    }
    return "?";
}

bool terminal(JobState s) { return s == JobState::done || s == JobState::failed || s == JobState::cancelled; }

std::string token() {
    static std::mutex m;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard l(m);
    static const char* digits = "0123456789abcdef";
    std::uint64_t v = rng();
    std::string s;
    for (int i = 0; i < 16; ++i, v >>= 4) s += digits[v & 15];
    return s;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

}  // namespace

struct Job {
    std::string id;
    std::string session;
    std::string kind;
    Json params;
    std::vector<Json> stages;
    std::atomic<bool> cancel{false};

    mutable std::mutex mu;
    mutable std::condition_variable cv;
    JobState state = JobState::queued;
    double progress = 0.0;
    std::vector<Json> history;
    std::vector<std::string> results;
    Json error = nullptr;
    std::string manifest;

    void log(const std::string& msg) {
        std::lock_guard l(mu);
        history.push_back({{"seq", history.size()}, {"time", utc_now()}, {"message", msg}});
    }
    void set_state(JobState s, const std::string& msg) {
        {
            std::lock_guard l(mu);
            state = s;
            history.push_back({{"seq", history.size()}, {"time", utc_now()}, {"message", msg}});
        }
        cv.notify_all();
    }
    void advance(double f) {
        std::lock_guard l(mu);
        progress = std::max(progress, std::clamp(f, 0.0, 1.0));
    }
    Json to_json() const {
        std::lock_guard l(mu);
        Json j;
        j["id"] = id;
        j["session"] = session;
        j["kind"] = kind;
        j["params"] = params;
        j["stages"] = stages;
        j["state"] = to_string(state);
        j["progress"] = progress;
        j["history"] = history;
        j["results"] = results;
        j["error"] = error;
        j["manifest"] = manifest.empty() ? Json(nullptr) : Json(manifest);
        return j;
    }
};

struct Session {
    std::string id;
    mutable std::mutex mu;
    std::condition_variable cv;
    std::shared_ptr<const VoxelVolume> raw;
    Json load_record;
    Roi roi;
    Json lineage = Json::array();
    Workspace ws;
    bool filtered = false;
    std::optional<TrainingTable> training;  // volume coordinates
    std::deque<std::shared_ptr<Job>> queue;
    std::vector<std::shared_ptr<Job>> jobs;
    std::shared_ptr<Job> running;
    bool stopping = false;
    std::thread worker;

    bool busy() const { return running || !queue.empty(); }
};

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::validation:
        case ErrorCode::parameter:
        case ErrorCode::coordinate:
        case ErrorCode::bounds:
        case ErrorCode::dimension_mismatch: return 400;
        case ErrorCode::io: return 404;
        case ErrorCode::cancelled: return 409;
        case ErrorCode::infeasible:
        case ErrorCode::degenerate_histogram:
        case ErrorCode::conditioning:
        case ErrorCode::range_overlap:
        case ErrorCode::empty_region:
        case ErrorCode::unsupported_format: return 422;
    }
    return 500;
}

namespace {

// "params.k: must be ..." -> "params.k"
std::string field_of(const std::string& msg) {
    const auto colon = msg.find(": ");
    if (colon == std::string::npos || colon == 0) return {};
    const std::string head = msg.substr(0, colon);
    if (head.find(' ') != std::string::npos) return {};
    return head;
}

[[noreturn]] void rethrow_api(const Error& e) {
    throw ApiError(http_status(e.code()), to_string(e.code()), e.what(), field_of(e.what()));
}

template <class F>
auto api(F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        rethrow_api(e);
    }
}

Json roi_json(const Roi& r) {
    return {{"x0", r.x0}, {"y0", r.y0}, {"z0", r.z0}, {"dx", r.dx}, {"dy", r.dy}, {"dz", r.dz}};
}

Json dims_json(const Dims& d) { return Json::array({d.nx, d.ny, d.nz}); }

std::vector<std::string> artifact_names(const Json& records) {
    std::vector<std::string> out;
    for (const auto& r : records)
        for (const auto& a : r.at("artifacts")) {
            const auto n = a.at("name").get<std::string>();
            if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
        }
    return out;
}

Json query_value(const std::string& key, const std::string& v) {
    if (key == "edges" || key == "offset") {
        Json arr = Json::array();
        std::size_t start = 0;
        while (start <= v.size()) {
            const auto comma = v.find(',', start);
            const std::string item = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!item.empty()) arr.push_back(query_value("", item));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return arr;
    }
    try {
        Json j = Json::parse(v);
        if (j.is_number() || j.is_boolean()) return j;
    } catch (const nlohmann::json::parse_error&) {
    }
    return v;
}

}  // namespace

Service::Service(fs::path data_dir) : data_dir_(fs::absolute(std::move(data_dir)).lexically_normal()) {
    fs::create_directories(data_dir_);
}

Service::~Service() {
    std::vector<std::shared_ptr<Session>> all;
    {
        std::lock_guard l(mu_);
        for (auto& [_, s] : sessions_) all.push_back(s);
    }
    for (auto& s : all) {
        {
            std::lock_guard l(s->mu);
            s->stopping = true;
            for (auto& j : s->jobs) j->cancel = true;
        }
        s->cv.notify_all();
    }
    for (auto& s : all)
        if (s->worker.joinable()) s->worker.join();
}

std::shared_ptr<Session> Service::session(const std::string& sid) const {
    if (sid.empty()) throw ApiError(400, "validation", "missing session parameter", "session");
    std::lock_guard l(mu_);
    const auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw ApiError(404, "not_found", "unknown session '" + sid + "'");
    return it->second;
}

std::shared_ptr<Job> Service::find_job(const std::string& id) const {
    std::lock_guard l(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw ApiError(404, "not_found", "unknown job '" + id + "'");
    return it->second;
}

// ---------------------------------------------------------------------------
// sessions

Json Service::create_session(const Json& body) {
    if (!body.is_object()) throw ApiError(400, "validation", "body: expected a JSON object", "body");
    Json stage = body;
    const std::string format = body.value("format", "raw");
    stage.erase("format");
    if (format == "raw")
        stage["op"] = "load_raw";
    else if (format == "tiff")
        stage["op"] = "load_tiff";
    else
        throw ApiError(400, "validation", "body.format: must be raw or tiff", "body.format");
    stage = api([&] { return normalize_stage(stage, "body"); });

    std::vector<std::string> paths;
    if (stage.contains("path")) paths.push_back(stage.at("path").get<std::string>());
    if (stage.contains("paths"))
        for (const auto& p : stage.at("paths")) paths.push_back(p.get<std::string>());
    for (const auto& p : paths) {
        const fs::path full = (fs::path(p).is_absolute() ? fs::path(p) : data_dir_ / p).lexically_normal();
        const auto rel = full.lexically_relative(data_dir_);
        if (rel.empty() || *rel.begin() == "..")
            throw ApiError(400, "validation", "body.path: '" + p + "' lies outside the data directory", "body.path");
    }

    auto s = std::make_shared<Session>();
    s->id = token();
    StageContext ctx{data_dir_, data_dir_ / "sessions" / s->id, {}};
    Json records = api([&] { return execute_stages(s->ws, {stage}, ctx); });
    s->load_record = records[0];
    s->lineage = records;
    s->raw = s->ws.volume;
    s->roi = Roi::full(s->raw->dims());
    fs::create_directories(ctx.output_dir);
    {
        std::lock_guard l(mu_);
        sessions_[s->id] = s;
    }
    s->worker = std::thread([this, s] { worker(s); });
    Json out;
    out["session"] = s->id;
    out["dims"] = dims_json(s->raw->dims());
    out["bit_depth"] = s->raw->bit_depth();
    out["voxel_size"] = s->raw->voxel_size();
    return out;
}

Json Service::session_info(const std::string& sid) const {
    const auto s = session(sid);
    std::lock_guard l(s->mu);
    Json j;
    j["session"] = s->id;
    j["dims"] = dims_json(s->raw->dims());
    j["bit_depth"] = s->raw->bit_depth();
    j["voxel_size"] = s->raw->voxel_size();
    j["roi"] = roi_json(s->roi);
    Json layers = Json::array({"raw"});
    if (s->filtered) layers.push_back("filtered");
    if (!s->ws.labels.empty()) layers.push_back("labels");
    j["layers"] = layers;
    Json labels = Json::array();
    for (const auto& [n, _] : s->ws.labels) labels.push_back(n);
    j["labels"] = labels;
    Json tables = Json::array();
    for (const auto& [n, _] : s->ws.tables) tables.push_back(n);
    j["tables"] = tables;
    Json reports = Json::array();
    for (const auto& [n, _] : s->ws.reports) reports.push_back(n);
    j["reports"] = reports;
    j["model"] = static_cast<bool>(s->ws.model);
    j["training_rows"] = s->training ? s->training->rows.size() : 0;
    Json jobs = Json::array();
    for (const auto& job : s->jobs) jobs.push_back(job->id);
    j["jobs"] = jobs;
    return j;
}

std::string Service::render_slice(const std::string& sid, long z, const Query& q) const {
    const auto s = session(sid);
    const auto get = [&](const char* k, const std::string& def) {
        const auto it = q.find(k);
        return it == q.end() ? def : it->second;
    };
    const std::string layer = get("layer", "raw");
    std::shared_ptr<const VoxelVolume> vol;
    std::shared_ptr<const LabelVolume> labels;
    {
        std::lock_guard l(s->mu);
        if (layer == "raw") {
            vol = s->raw;
        } else if (layer == "filtered") {
            if (!s->filtered) throw ApiError(404, "not_found", "no filtered layer yet");
            vol = s->ws.volume;
        } else if (layer == "labels") {
            const std::string name = get("name", s->ws.last_labels);
            const auto it = s->ws.labels.find(name);
            if (it == s->ws.labels.end())
                throw ApiError(404, "not_found", name.empty() ? "no label volume yet" : "unknown label volume '" + name + "'");
            labels = it->second;
        } else {
            throw ApiError(400, "validation", "layer: must be raw, filtered or labels", "layer");
        }
    }
    const std::size_t nz = vol ? vol->nz() : labels->nz();
    if (z < 0 || static_cast<std::size_t>(z) >= nz)
        throw ApiError(404, "not_found", "slice " + std::to_string(z) + " outside 0.." + std::to_string(nz - 1));
    if (labels) return api([&] { return render_labels_png(*labels, static_cast<std::size_t>(z)); });
    Window w{0.0, static_cast<double>(vol->max_value())};
    if (const auto it = q.find("window"); it != q.end()) {
        try {
            w = Window::parse(it->second);
        } catch (const Error& e) {
            throw ApiError(400, "validation", e.what(), "window");
        }
    }
    return api([&] { return render_slice_png(*vol, static_cast<std::size_t>(z), w); });
}

Json Service::set_roi(const std::string& sid, const Json& body) {
    const auto s = session(sid);
    Roi roi;
    if (body.is_array() && body.size() == 6) {
        for (const auto& v : body)
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
                throw ApiError(400, "validation", "body: expected six non-negative integers", "body");
        roi = Roi{body[0].get<std::size_t>(), body[1].get<std::size_t>(), body[2].get<std::size_t>(),
                  body[3].get<std::size_t>(), body[4].get<std::size_t>(), body[5].get<std::size_t>()};
    } else if (body.is_object()) {
        std::size_t* dst[6] = {&roi.x0, &roi.y0, &roi.z0, &roi.dx, &roi.dy, &roi.dz};
        const char* keys[6] = {"x0", "y0", "z0", "dx", "dy", "dz"};
        for (const auto& [k, _] : body.items())
            if (std::find_if(std::begin(keys), std::end(keys), [&](const char* x) { return k == x; }) == std::end(keys))
                throw ApiError(400, "validation", "body." + k + ": unknown field", "body." + k);
        for (int i = 0; i < 6; ++i) {
            if (!body.contains(keys[i]))
                throw ApiError(400, "validation", std::string("body.") + keys[i] + ": required", std::string("body.") + keys[i]);
            const auto& v = body.at(keys[i]);
            if (!v.is_number_integer() || v.get<long long>() < 0)
                throw ApiError(400, "validation", std::string("body.") + keys[i] + ": expected a non-negative integer",
                               std::string("body.") + keys[i]);
            *dst[i] = v.get<std::size_t>();
        }
    } else {
        throw ApiError(400, "validation", "body: expected {x0,y0,z0,dx,dy,dz}", "body");
    }

    std::lock_guard l(s->mu);
    if (s->busy()) throw ApiError(409, "conflict", "jobs are queued or running in this session; ROI unchanged");
    try {
        roi.check_within(s->raw->dims());
    } catch (const Error& e) {
        throw ApiError(400, "validation", std::string("body: ") + e.what(), "body");
    }
    Workspace ws;
    ws.volume = s->raw;
    Json lineage = Json::array({s->load_record});
    if (!(roi.x0 == 0 && roi.y0 == 0 && roi.z0 == 0 && roi.dx == s->raw->nx() && roi.dy == s->raw->ny() &&
          roi.dz == s->raw->nz())) {
        Json stage = normalize_stage({{"op", "crop"}, {"roi", {roi.x0, roi.y0, roi.z0, roi.dx, roi.dy, roi.dz}}}, "roi");
        StageContext ctx{data_dir_, data_dir_ / "sessions" / s->id, {}};
        const Json rec = api([&] { return execute_stages(ws, {stage}, ctx, 1); });
        lineage.push_back(rec[0]);
    }
    s->roi = roi;
    s->ws = std::move(ws);
    s->lineage = std::move(lineage);
    s->filtered = false;
    bool dropped = false;
    if (s->training) {
        for (const auto& r : s->training->rows)
            if (r.x < static_cast<long>(roi.x0) || r.x >= static_cast<long>(roi.x0 + roi.dx) ||
                r.y < static_cast<long>(roi.y0) || r.y >= static_cast<long>(roi.y0 + roi.dy) ||
                r.slice < static_cast<long>(roi.z0) || r.slice >= static_cast<long>(roi.z0 + roi.dz))
                dropped = true;
        if (dropped) s->training.reset();
    }
    Json out = roi_json(roi);
    out["training_table_dropped"] = dropped;
    return out;
}

Json Service::set_training_table(const std::string& sid, const Json& body) {
    const auto s = session(sid);
    const Json rows = body.is_array() ? body : (body.is_object() && body.contains("rows") ? body.at("rows") : Json());
    if (!rows.is_array()) throw ApiError(400, "validation", "body: expected {\"rows\": [...]}", "body.rows");
    if (rows.empty()) throw ApiError(400, "validation", "body.rows: empty training table", "body.rows");
    const Json stage = api([&] { return normalize_stage({{"op", "training_table"}, {"rows", rows}}, "body"); });

    TrainingTable t;
    for (const auto& r : stage.at("rows")) {
        TrainingRow row;
        row.class_id = r.at("class").get<int>();
        row.feature_name = r.value("feature", "");
        row.x = r.at("x").get<long>();
        row.y = r.at("y").get<long>();
        row.slice = r.at("slice").get<long>();
        t.rows.push_back(row);
    }
    std::lock_guard l(s->mu);
    const Roi& roi = s->roi;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        const std::string where = "body.rows[" + std::to_string(i) + "]";
        const std::string row = "row " + std::to_string(i + 1) + ": ";
        auto check = [&](const char* axis, long v, std::size_t lo, std::size_t n) {
            if (v < static_cast<long>(lo) || v >= static_cast<long>(lo + n))
                throw ApiError(400, "coordinate",
                               row + axis + "=" + std::to_string(v) + " outside the ROI " + axis + " range " +
                                   std::to_string(lo) + ".." + std::to_string(lo + n - 1),
                               where + "." + axis);
        };
        if (r.class_id < 1 || r.class_id > 255)
            throw ApiError(400, "validation", row + "class must be in 1..255", where + ".class");
        check("x", r.x, roi.x0, roi.dx);
        check("y", r.y, roi.y0, roi.dy);
        check("slice", r.slice, roi.z0, roi.dz);
    }
    s->training = t;
    Json out;
    out["rows"] = t.rows.size();
    out["classes"] = t.classes();
    return out;
}

Json Service::training_table(const std::string& sid) const {
    const auto s = session(sid);
    std::lock_guard l(s->mu);
    Json rows = Json::array();
    if (s->training)
        for (const auto& r : s->training->rows)
            rows.push_back({{"class", r.class_id}, {"feature", r.feature_name}, {"x", r.x}, {"y", r.y}, {"slice", r.slice}});
    return {{"rows", rows}};
}

// ---------------------------------------------------------------------------
// jobs

Json Service::submit_job(const std::string& sid, const Json& body) {
    const auto s = session(sid);
    if (!body.is_object()) throw ApiError(400, "validation", "body: expected {\"kind\": ..., \"params\": {...}}", "body");
    if (!body.contains("kind") || !body.at("kind").is_string())
        throw ApiError(400, "validation", "body.kind: required (filter, segment, ede, analyze, classify)", "body.kind");
    const std::string kind = body.at("kind").get<std::string>();
    const Json params = body.value("params", Json::object());
    if (!params.is_object()) throw ApiError(400, "validation", "body.params: expected an object", "body.params");
    for (const auto& [k, _] : body.items())
        if (k != "kind" && k != "params") throw ApiError(400, "validation", "body." + k + ": unknown field", "body." + k);

    auto take = [&](const char* key, const std::string& def, std::initializer_list<const char*> allowed) {
        std::string v = def;
        if (params.contains(key)) {
            if (!params.at(key).is_string())
                throw ApiError(400, "validation", std::string("params.") + key + ": expected a string", std::string("params.") + key);
            v = params.at(key).get<std::string>();
        }
        if (v.empty() || std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return v == a; })) {
            std::string list;
            for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
            throw ApiError(400, "validation", std::string("params.") + key + ": must be one of " + list,
                           std::string("params.") + key);
        }
        return v;
    };
    auto stage_from = [&](const std::string& op, std::initializer_list<const char*> drop) {
        Json st = params;
        for (const char* d : drop) st.erase(d);
        st["op"] = op;
        return api([&] { return normalize_stage(st, "params"); });
    };

    std::vector<Json> stages;
    if (kind == "filter") {
        stages.push_back(stage_from(take("method", "", {"nlm", "ad", "smooth", "contrast"}), {"method"}));
    } else if (kind == "segment") {
        stages.push_back(stage_from(take("method", "kmeans", {"kmeans", "fcm"}), {"method"}));
    } else if (kind == "ede") {
        stages.push_back(stage_from("ede", {}));
    } else if (kind == "analyze") {
        stages.push_back(stage_from(take("op", "", {"porosity", "trend", "fractions", "psd", "rev"}), {"op"}));
    } else if (kind == "classify") {
        Json train = params;
        const Json name = params.value("name", Json("classified"));
        train.erase("name");
        train["op"] = "train";
        Json cls = {{"op", "classify"}, {"name", name}};
        stages.push_back(api([&] { return normalize_stage(train, "params"); }));
        stages.push_back(api([&] { return normalize_stage(cls, "params"); }));
    } else {
        throw ApiError(400, "validation", "body.kind: must be filter, segment, ede, analyze or classify", "body.kind");
    }

    auto job = std::make_shared<Job>();
    job->id = token();
    job->session = s->id;
    job->kind = kind;
    job->params = params;
    {
        std::lock_guard l(s->mu);
        const Dims dims = s->ws.volume->dims();
        // feasibility against the data currently published in the session
        if (kind == "classify") {
            if (!s->training) throw ApiError(422, "infeasible", "no training table stored in this session");
            if (s->training->classes().size() < 2)
                throw ApiError(422, "infeasible", "training table needs at least two classes");
            Json rows = Json::array();
            for (const auto& r : s->training->rows)
                rows.push_back({{"class", r.class_id},
                                {"feature", r.feature_name},
                                {"x", r.x - static_cast<long>(s->roi.x0)},
                                {"y", r.y - static_cast<long>(s->roi.y0)},
                                {"slice", r.slice - static_cast<long>(s->roi.z0)}});
            stages.insert(stages.begin(), normalize_stage({{"op", "training_table"}, {"rows", rows}}, "training_table"));
        } else if (kind == "segment" && !s->busy()) {
            const auto& st = stages[0];
            const int k = st.at("op") == "kmeans" ? st.at("k").get<int>() : st.at("c").get<int>();
            const auto distinct = unmasked_histogram(*s->ws.volume, st.at("mask").get<double>()).values.size();
            if (distinct < static_cast<std::size_t>(k))
                throw ApiError(422, "infeasible",
                               "params: " + std::to_string(k) + " clusters requested but only " +
                                   std::to_string(distinct) + " distinct unmasked intensities",
                               "params.k");
        } else if (kind == "ede") {
            for (const auto& z : stages[0].at("seg_slices"))
                if (z.get<std::size_t>() >= dims.nz)
                    throw ApiError(422, "infeasible",
                                   "params.seg_slices: slice " + std::to_string(z.get<std::size_t>()) +
                                       " outside the working volume (nz=" + std::to_string(dims.nz) + ")",
                                   "params.seg_slices");
        }
        job->stages = stages;
        job->log("queued" + std::string(s->busy() ? " behind " + std::to_string(s->queue.size() + (s->running ? 1 : 0)) +
                                                        " job(s)"
                                                  : ""));
        s->queue.push_back(job);
        s->jobs.push_back(job);
    }
    {
        std::lock_guard l(mu_);
        jobs_[job->id] = job;
    }
    s->cv.notify_all();
    return {{"job", job->id}, {"state", "queued"}};
}

Json Service::job(const std::string& id) const { return find_job(id)->to_json(); }

Json Service::jobs(const std::string& sid) const {
    const auto s = session(sid);
    std::vector<std::shared_ptr<Job>> list;
    {
        std::lock_guard l(s->mu);
        list = s->jobs;
    }
    Json out = Json::array();
    for (const auto& j : list) {
        Json x = j->to_json();
        out.push_back({{"id", x["id"]}, {"kind", x["kind"]}, {"state", x["state"]}, {"progress", x["progress"]}});
    }
    return out;
}

Json Service::cancel_job(const std::string& id) {
    const auto job = find_job(id);
    {
        std::lock_guard l(job->mu);
        if (terminal(job->state))
            throw ApiError(409, "conflict", "job " + id + " already " + to_string(job->state));
    }
    if (!job->cancel.exchange(true)) job->log("cancel requested");
    return job->to_json();
}

bool Service::wait_job(const std::string& id, std::chrono::milliseconds timeout) const {
    const auto job = find_job(id);
    std::unique_lock l(job->mu);
    return job->cv.wait_for(l, timeout, [&] { return terminal(job->state); });
}

void Service::worker(std::shared_ptr<Session> s) {
    for (;;) {
        std::shared_ptr<Job> job;
        {
            std::unique_lock l(s->mu);
            s->cv.wait(l, [&] { return s->stopping || !s->queue.empty(); });
            if (s->stopping) {
                for (auto& j : s->queue) j->set_state(JobState::cancelled, "cancelled: service shutting down");
                s->queue.clear();
                return;
            }
            job = s->queue.front();
            s->queue.pop_front();
            s->running = job;
        }
        run_job(*s, *job);
        {
            std::lock_guard l(s->mu);
            s->running.reset();
        }
    }
}

void Service::run_job(Session& s, Job& job) {
    if (job.cancel) {
        job.set_state(JobState::cancelled, "cancelled before start");
        return;
    }
    Workspace ws;
    Json lineage;
    {
        std::lock_guard l(s.mu);
        ws = s.ws;
        lineage = s.lineage;
    }
    job.set_state(JobState::running, "started");
    const fs::path dir = data_dir_ / "sessions" / s.id / "jobs" / job.id;
    StageContext ctx{data_dir_, dir, {}};
    ctx.control.cancelled = [&job] { return job.cancel.load(); };
    std::size_t current = 0;
    ctx.control.progress = [&job](double f) { job.advance(f); };
    const auto t0 = std::chrono::steady_clock::now();
    try {
        Json records = Json::array();
        for (std::size_t i = 0; i < job.stages.size(); ++i) {
            current = i;
            const double n = static_cast<double>(job.stages.size());
            StageContext sc{ctx.base_dir, ctx.output_dir, {}};
            sc.control.cancelled = ctx.control.cancelled;
            sc.control.progress = [&job, i, n](double f) { job.advance((static_cast<double>(i) + f) / n); };
            const Json rec = execute_stages(ws, {job.stages[i]}, sc, lineage.size() + i);
            job.log("stage " + std::to_string(i) + " (" + job.stages[i].at("op").get<std::string>() + ") finished");
            for (const auto& line : rec[0].at("log")) job.log(line.get<std::string>());
            records.push_back(rec[0]);
        }
        Json full = lineage;
        for (const auto& r : records) full.push_back(r);
        const Json manifest = make_manifest(data_dir_, dir, full);
        fs::create_directories(dir);
        write_file(dir / "manifest.json", manifest.dump(2) + "\n");
        {
            std::lock_guard l(s.mu);
            s.ws = std::move(ws);
            s.lineage = full;
            if (job.kind == "filter") s.filtered = true;
        }
        {
            std::lock_guard l(job.mu);
            job.results = artifact_names(records);
            job.manifest = (dir / "manifest.json").string();
        }
        job.advance(1.0);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        job.set_state(JobState::done, "done in " + format_number(std::round(secs * 1000) / 1000) + " s");
    } catch (const Error& e) {
        if (e.code() == ErrorCode::cancelled) {
            job.set_state(JobState::cancelled, "cancelled during stage " + std::to_string(current) +
                                                   "; session artifacts unchanged");
            return;
        }
        {
            std::lock_guard l(job.mu);
            job.error = {{"code", to_string(e.code())}, {"message", e.what()}, {"status", http_status(e.code())}};
        }
        job.set_state(JobState::failed, std::string("failed: ") + e.what());
    } catch (const std::exception& e) {
        {
            std::lock_guard l(job.mu);
            job.error = {{"code", "internal"}, {"message", e.what()}, {"status", 500}};
        }
        job.set_state(JobState::failed, std::string("failed: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// metrics and export

Json Service::metrics(const std::string& sid, const std::string& labels, const Query& q) const {
    const auto s = session(sid);
    const auto op_it = q.find("op");
    if (op_it == q.end()) throw ApiError(400, "validation", "op: required (porosity, psd, fractions, trend, rev)", "op");
    Json stage = {{"op", op_it->second}, {"labels", labels}, {"name", "metrics"}};
    for (const auto& [k, v] : q)
        if (k != "op" && k != "session") stage[k] = query_value(k, v);
    if (op_it->second != "porosity" && op_it->second != "psd" && op_it->second != "fractions" &&
        op_it->second != "trend" && op_it->second != "rev")
        throw ApiError(400, "validation", "op: must be porosity, psd, fractions, trend or rev", "op");
    stage = api([&] { return normalize_stage(stage, "query"); });
    Workspace ws;
    {
        std::lock_guard l(s->mu);
        const auto it = s->ws.labels.find(labels);
        if (it == s->ws.labels.end()) throw ApiError(404, "not_found", "unknown label volume '" + labels + "'");
        ws.labels[labels] = it->second;
    }
    StageContext ctx{data_dir_, data_dir_, {}};
    StageOutcome out;
    api([&] {
        run_stage(ws, stage, ctx, out);
        return 0;
    });
    return ws.reports.at("metrics");
}

ExportPayload Service::export_artifact(const std::string& sid, const std::string& artifact, const Query& q) const {
    const auto s = session(sid);
    const auto fmt = q.find("format");
    if (fmt == q.end()) throw ApiError(400, "validation", "format: required (vtk, raw, csv, json)", "format");
    ExportRequest req{artifact, fmt->second, "binary", "little"};
    if (auto it = q.find("encoding"); it != q.end()) req.encoding = it->second;
    if (auto it = q.find("byte_order"); it != q.end()) req.byte_order = it->second;
    if (req.encoding != "binary" && req.encoding != "ascii")
        throw ApiError(400, "validation", "encoding: must be binary or ascii", "encoding");

    Workspace ws;
    bool is_labels = false;
    {
        std::lock_guard l(s->mu);
        ws = s->ws;
        if (artifact == "raw") {
            ws.volume = s->raw;
            req.artifact = "volume";
        }
        const bool known = artifact == "raw" || artifact == "volume" || (artifact == "model" && ws.model) ||
                           ws.labels.count(artifact) || ws.tables.count(artifact) || ws.reports.count(artifact);
        if (artifact == "training_table") {
            if (!s->training) throw ApiError(404, "not_found", "no training table stored");
            ws.training = s->training;
        } else if (!known) {
            throw ApiError(404, "not_found", "unknown artifact '" + artifact + "'");
        }
        is_labels = ws.labels.count(artifact) > 0;
    }
    if (is_labels && req.format == "csv") {
        if (!q.count("op"))
            throw ApiError(400, "validation", "op: required for CSV export of a label volume", "op");
        Json stage = {{"op", q.at("op")}, {"labels", artifact}, {"name", "metrics"}};
        for (const auto& [k, v] : q)
            if (k != "op" && k != "session" && k != "format" && k != "encoding" && k != "byte_order")
                stage[k] = query_value(k, v);
        stage = api([&] { return normalize_stage(stage, "query"); });
        StageContext ctx{data_dir_, data_dir_, {}};
        StageOutcome out;
        api([&] {
            run_stage(ws, stage, ctx, out);
            return 0;
        });
        return {to_csv(ws.tables.at("metrics")), "text/csv", artifact + "." + q.at("op") + ".csv"};
    }
    return api([&] { return rockseg::export_artifact(ws, req); });
}

// ---------------------------------------------------------------------------
// HTTP

std::pair<std::string, int> parse_bind_address(const std::string& s) {
    std::string host = "127.0.0.1";
    std::string port = s;
    if (const auto colon = s.rfind(':'); colon != std::string::npos) {
        if (colon > 0) host = s.substr(0, colon);
        port = s.substr(colon + 1);
    }
    int p = -1;
    try {
        std::size_t used = 0;
        p = std::stoi(port, &used);
        if (used != port.size()) p = -1;
    } catch (const std::exception&) {
    }
    if (p < 0 || p > 65535) fail(ErrorCode::validation, "bind address must be host:port, got '" + s + "'");
    return {host, p};
}

struct HttpServer::Impl {
    Service& service;
    httplib::Server server;

    explicit Impl(Service& s) : service(s) {}
};

namespace {

Query query_of(const httplib::Request& req) {
    Query q;
    for (const auto& [k, v] : req.params) q[k] = v;
    return q;
}

std::string param(const httplib::Request& req, const char* key) {
    return req.has_param(key) ? req.get_param_value(key) : std::string();
}

Json body_json(const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    try {
        return Json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ApiError(400, "validation", std::string("body: invalid JSON: ") + e.what(), "body");
    }
}

void send_json(httplib::Response& res, const Json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump() + "\n", "application/json");
}

template <class F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ApiError& e) {
            Json j = {{"error", e.code}, {"message", e.what()}};
            if (!e.field.empty()) j["field"] = e.field;
            send_json(res, j, e.status);
        } catch (const Error& e) {
            Json j = {{"error", to_string(e.code())}, {"message", e.what()}};
            if (const auto f = field_of(e.what()); !f.empty()) j["field"] = f;
            send_json(res, j, http_status(e.code()));
        } catch (const std::exception& e) {
            send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
        }
    };
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    Service& svc = impl_->service;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
    srv.Post("/volume", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, svc.create_session(body_json(req)), 201);
             }));
    srv.Get("/session", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, svc.session_info(param(req, "session")));
            }));
    srv.Get(R"(/slice/(-?\d+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                const long z = std::stol(req.matches[1].str());
                res.set_content(svc.render_slice(param(req, "session"), z, query_of(req)), "image/png");
            }));
    srv.Put("/roi", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, svc.set_roi(param(req, "session"), body_json(req)));
            }));
    srv.Get("/roi", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, svc.session_info(param(req, "session")).at("roi"));
            }));
    srv.Put("/training-table", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                Json body;
                if (req.get_header_value("Content-Type").rfind("text/csv", 0) == 0) {
                    TrainingTable t;
                    try {
                        t = parse_training_csv(req.body);
                    } catch (const Error& e) {
                        throw ApiError(400, "validation", std::string("body: ") + e.what(), "body");
                    }
                    Json rows = Json::array();
                    for (const auto& r : t.rows)
                        rows.push_back({{"class", r.class_id}, {"feature", r.feature_name}, {"x", r.x}, {"y", r.y}, {"slice", r.slice}});
                    body = {{"rows", rows}};
                } else {
                    body = body_json(req);
                }
                send_json(res, svc.set_training_table(param(req, "session"), body));
            }));
    srv.Get("/training-table", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, svc.training_table(param(req, "session")));
            }));
    srv.Post("/jobs", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, svc.submit_job(param(req, "session"), body_json(req)), 202);
             }));
    srv.Get("/jobs", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, svc.jobs(param(req, "session")));
            }));
    srv.Get(R"(/jobs/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, svc.job(req.matches[1].str()));
            }));
    srv.Delete(R"(/jobs/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, svc.cancel_job(req.matches[1].str()));
               }));
    srv.Get(R"(/metrics/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, svc.metrics(param(req, "session"), req.matches[1].str(), query_of(req)));
            }));
    srv.Get(R"(/export/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                const ExportPayload p = svc.export_artifact(param(req, "session"), req.matches[1].str(), query_of(req));
                res.set_header("Content-Disposition", "attachment; filename=\"" + p.filename + "\"");
                res.set_content(p.bytes, p.content_type);
            }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port))
        fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace rockseg
