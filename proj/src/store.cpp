#include "streetbase/store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include "streetbase/geojson.hpp"

namespace streetbase {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;
using json = nlohmann::json;

std::string_view to_string(ChangeKind kind) {
    switch (kind) {
    case ChangeKind::Insert: return "insert";
    case ChangeKind::Update: return "update";
    case ChangeKind::Delete: return "delete";
    }
    return "insert";
}

ChangeKind parse_change_kind(std::string_view text) {
    if (text == "insert") return ChangeKind::Insert;
    if (text == "update") return ChangeKind::Update;
    if (text == "delete") return ChangeKind::Delete;
    throw Error(ErrorCode::ParseError, "unknown change kind '" + std::string(text) + "'");
}

unsigned event_bit(ChangeKind kind) {
    switch (kind) {
    case ChangeKind::Insert: return OnInsert;
    case ChangeKind::Update: return OnUpdate;
    case ChangeKind::Delete: return OnDelete;
    }
    return 0;
}

std::string_view to_string(Timing t) {
    switch (t) {
    case Timing::Before: return "before";
    case Timing::After: return "after";
    case Timing::Deferred: return "deferred";
    }
    return "after";
}

namespace {

Timing parse_timing(std::string_view s) {
    if (s == "before") return Timing::Before;
    if (s == "after") return Timing::After;
    if (s == "deferred") return Timing::Deferred;
    throw Error(ErrorCode::ParseError, "unknown trigger timing '" + std::string(s) + "'");
}

json events_json(unsigned mask) {
    json a = json::array();
    if (mask & OnInsert) a.push_back("insert");
    if (mask & OnUpdate) a.push_back("update");
    if (mask & OnDelete) a.push_back("delete");
    return a;
}

unsigned events_from(const json& a) {
    unsigned mask = 0;
    for (const auto& e : a) {
        mask |= event_bit(parse_change_kind(e.get<std::string>()));
    }
    return mask;
}

} // namespace

std::string_view to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::Physical: return "physical";
    case LayerKind::View: return "view";
    case LayerKind::Virtual: return "virtual";
    }
    return "physical";
}

// --- handler registry -------------------------------------------------------

void HandlerRegistry::add(const std::string& name, RecordHandler h) { records_[name] = std::move(h); }
void HandlerRegistry::add_deferred(const std::string& name, DeferredHandler h) {
    deferred_[name] = std::move(h);
}
void HandlerRegistry::add_reader(const std::string& name, VirtualReader r) {
    readers_[name] = std::move(r);
}
void HandlerRegistry::add_merge_hook(const std::string& name, MergeHook h) {
    hooks_[name] = std::move(h);
}

namespace {
template <class Map>
const typename Map::mapped_type& lookup(const Map& m, const std::string& name, const char* what) {
    auto it = m.find(name);
    if (it == m.end()) {
        throw Error(ErrorCode::Misconfigured, std::string("unknown ") + what + " '" + name + "'");
    }
    return it->second;
}
} // namespace

const RecordHandler& HandlerRegistry::record(const std::string& name) const {
    return lookup(records_, name, "record handler");
}
const DeferredHandler& HandlerRegistry::deferred(const std::string& name) const {
    return lookup(deferred_, name, "deferred handler");
}
const VirtualReader& HandlerRegistry::reader(const std::string& name) const {
    return lookup(readers_, name, "virtual layer reader");
}
const MergeHook& HandlerRegistry::merge_hook(const std::string& name) const {
    return lookup(hooks_, name, "merge hook");
}

const Feature& ReadAccess::get(const std::string& layer, std::int64_t id) const {
    const Feature* f = find(layer, id);
    if (!f) {
        throw Error(ErrorCode::NotFound, "no feature " + std::to_string(id) + " in " + layer, layer,
                    id);
    }
    return *f;
}

// --- change feed ------------------------------------------------------------

void ChangeFeed::publish(const std::vector<ChangeRecord>& records) {
    if (records.empty()) {
        return;
    }
    {
        std::lock_guard lock(mutex_);
        for (const auto& r : records) {
            history_.push_back(r);
            last_ = r.sequence;
        }
        while (history_.size() > capacity_) {
            history_.pop_front();
        }
    }
    cv_.notify_all();
}

std::vector<ChangeRecord> ChangeFeed::since(std::uint64_t since, std::size_t max) const {
    std::lock_guard lock(mutex_);
    std::vector<ChangeRecord> out;
    if (since >= last_) {
        return out;
    }
    const std::uint64_t oldest = history_.empty() ? last_ + 1 : history_.front().sequence;
    if (since + 1 < oldest) {
        throw Error(ErrorCode::OutOfRange, "resume point " + std::to_string(since) +
                                               " expired; oldest available sequence is " +
                                               std::to_string(oldest));
    }
    auto it = std::lower_bound(history_.begin(), history_.end(), since + 1,
                               [](const ChangeRecord& r, std::uint64_t s) { return r.sequence < s; });
    for (; it != history_.end() && out.size() < max; ++it) {
        out.push_back(*it);
    }
    return out;
}

bool ChangeFeed::wait(std::uint64_t since, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    return cv_.wait_for(lock, timeout, [&] { return last_ > since; });
}

std::uint64_t ChangeFeed::last() const {
    std::lock_guard lock(mutex_);
    return last_;
}

std::uint64_t ChangeFeed::oldest_available() const {
    std::lock_guard lock(mutex_);
    return history_.empty() ? last_ + 1 : history_.front().sequence;
}

void ChangeFeed::reset(std::uint64_t last_sequence) {
    std::lock_guard lock(mutex_);
    history_.clear();
    last_ = last_sequence;
}

// --- spatial index ----------------------------------------------------------

namespace {

using BPoint = bg::model::point<double, 2, bg::cs::cartesian>;
using BBox = bg::model::box<BPoint>;
using Entry = std::pair<BBox, std::int64_t>;

BBox to_box(const geom::BBox& b) { return BBox(BPoint(b.min_x, b.min_y), BPoint(b.max_x, b.max_y)); }

bool segment_hits_box(const geom::Point& a, const geom::Point& b, const geom::BBox& box) {
    // Liang-Barsky clipping.
    double t0 = 0.0;
    double t1 = 1.0;
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x - box.min_x, box.max_x - a.x, a.y - box.min_y, box.max_y - a.y};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0.0) {
                return false;
            }
            continue;
        }
        const double t = q[i] / p[i];
        if (p[i] < 0.0) {
            t0 = std::max(t0, t);
        } else {
            t1 = std::min(t1, t);
        }
        if (t0 > t1) {
            return false;
        }
    }
    return true;
}

bool geometry_hits_box(const Geometry& g, const geom::BBox& box) {
    if (const auto* p = std::get_if<geom::Point>(&g)) {
        return box.contains(*p);
    }
    auto ring_hits = [&](const std::vector<geom::Point>& pts) {
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
            if (segment_hits_box(pts[i], pts[i + 1], box)) {
                return true;
            }
        }
        return pts.size() == 1 && box.contains(pts[0]);
    };
    if (const auto* l = std::get_if<geom::Polyline>(&g)) {
        return ring_hits(l->vertices);
    }
    if (const auto* poly = std::get_if<geom::Polygon>(&g)) {
        if (ring_hits(poly->exterior)) {
            return true;
        }
        for (const auto& h : poly->holes) {
            if (ring_hits(h)) {
                return true;
            }
        }
        // Box entirely inside the polygon.
        return geom::contains(*poly, {box.min_x, box.min_y, {}}, 0.0);
    }
    return false;
}

} // namespace

struct Store::Index {
    bgi::rtree<Entry, bgi::quadratic<16>> tree;
    std::map<std::int64_t, BBox> boxes;

    void insert(const Feature& f) {
        if (kind_of(f.geometry) == GeometryKind::None) {
            return;
        }
        const BBox b = to_box(bbox_of(f.geometry));
        tree.insert({b, f.id});
        boxes[f.id] = b;
    }
    void remove(std::int64_t id) {
        auto it = boxes.find(id);
        if (it == boxes.end()) {
            return;
        }
        tree.remove(Entry{it->second, id});
        boxes.erase(it);
    }
};

// --- store ------------------------------------------------------------------

Store::Store(Config config) : config_(config) {}
Store::~Store() = default;

void Store::set_config(const Config& config) {
    std::unique_lock lock(mutex_);
    config_ = config;
}

void Store::check_name_free(const std::string& name) const {
    if (physical_.count(name) || views_.count(name) || bindings_.count(name) ||
        virtuals_.count(name)) {
        throw Error(ErrorCode::Conflict, "layer name '" + name + "' is already in use", name);
    }
}

void Store::create_layer(Schema schema) {
    std::unique_lock lock(mutex_);
    check_name_free(schema.name);
    std::set<std::string> seen;
    for (const auto& a : schema.attributes) {
        if (!seen.insert(a.name).second) {
            throw Error(ErrorCode::Conflict, "duplicate attribute '" + a.name + "'", schema.name);
        }
    }
    const std::string name = schema.name;
    physical_.emplace(name, Physical{std::move(schema), {}, std::make_unique<Index>()});
}

void Store::register_trigger(TriggerSpec spec) {
    std::unique_lock lock(mutex_);
    if (triggers_.count(spec.name)) {
        throw Error(ErrorCode::Conflict, "trigger '" + spec.name + "' already registered");
    }
    if (!physical_.count(spec.layer)) {
        throw Error(ErrorCode::NotFound, "trigger '" + spec.name + "' targets unknown layer",
                    spec.layer);
    }
    if (spec.timing == Timing::Deferred ? !handlers_.has_deferred(spec.handler)
                                        : !handlers_.has_record(spec.handler)) {
        throw Error(ErrorCode::Misconfigured, "trigger '" + spec.name + "' has unknown handler '" +
                                                  spec.handler + "'");
    }
    auto& order = trigger_order_[{spec.layer, spec.timing}];
    order.push_back(spec.name);
    const std::string name = spec.name;
    triggers_.emplace(name, std::move(spec));
    std::sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
        const auto& ta = triggers_.at(a);
        const auto& tb = triggers_.at(b);
        return std::tie(ta.priority, ta.name) < std::tie(tb.priority, tb.name);
    });
}

void Store::register_proxy_view(ProxyView view) {
    std::unique_lock lock(mutex_);
    check_name_free(view.name);
    if (!physical_.count(view.base) && !bindings_.count(view.base) && !virtuals_.count(view.base)) {
        throw Error(ErrorCode::NotFound, "view '" + view.name + "' has unknown base", view.base);
    }
    for (ChangeKind k : {ChangeKind::Insert, ChangeKind::Update, ChangeKind::Delete}) {
        if (!(view.allowed & event_bit(k))) {
            continue;
        }
        auto it = view.handlers.find(k);
        if (it == view.handlers.end() || !handlers_.has_record(it->second)) {
            throw Error(ErrorCode::Misconfigured, "view '" + view.name + "' allows " +
                                                      std::string(to_string(k)) +
                                                      " but has no handler for it");
        }
    }
    const std::string name = view.name;
    views_.emplace(name, std::move(view));
}

void Store::register_override_binding(OverrideBinding b) {
    std::unique_lock lock(mutex_);
    check_name_free(b.name);
    auto a = physical_.find(b.auto_layer);
    auto o = physical_.find(b.override_layer);
    if (a == physical_.end() || o == physical_.end()) {
        throw Error(ErrorCode::Misconfigured, "binding '" + b.name + "' needs physical layers");
    }
    for (const auto& k : b.keys) {
        if (!a->second.schema.find(k) || !o->second.schema.find(k)) {
            throw Error(ErrorCode::Misconfigured,
                        "key column '" + k + "' missing from binding '" + b.name + "'");
        }
    }
    for (const auto& c : b.columns) {
        if (c != "geometry" && (!a->second.schema.find(c) || !o->second.schema.find(c))) {
            throw Error(ErrorCode::Misconfigured,
                        "column '" + c + "' missing from binding '" + b.name + "'");
        }
    }
    if (!b.post_merge.empty()) {
        handlers_.merge_hook(b.post_merge);
    }
    const std::string name = b.name;
    bindings_.emplace(name, std::move(b));
}

void Store::register_virtual_layer(VirtualLayer layer) {
    std::unique_lock lock(mutex_);
    check_name_free(layer.schema.name);
    handlers_.reader(layer.reader);
    layer.schema.user_writable = false;
    const std::string name = layer.schema.name;
    virtuals_.emplace(name, std::move(layer));
}

const Schema& Store::schema_of(const std::string& layer) const {
    if (auto it = physical_.find(layer); it != physical_.end()) {
        return it->second.schema;
    }
    if (auto it = views_.find(layer); it != views_.end()) {
        return schema_of(it->second.base);
    }
    if (auto it = bindings_.find(layer); it != bindings_.end()) {
        return schema_of(it->second.auto_layer);
    }
    if (auto it = virtuals_.find(layer); it != virtuals_.end()) {
        return it->second.schema;
    }
    throw Error(ErrorCode::NotFound, "unknown layer '" + layer + "'", layer);
}

LayerInfo Store::layer_info(const std::string& name) const {
    std::shared_lock lock(mutex_);
    LayerInfo info;
    info.name = name;
    if (auto it = physical_.find(name); it != physical_.end()) {
        info.kind = LayerKind::Physical;
        info.schema = it->second.schema;
        info.editable = it->second.schema.user_writable;
        return info;
    }
    if (auto it = views_.find(name); it != views_.end()) {
        const ProxyView& v = it->second;
        info.kind = LayerKind::View;
        info.base = v.base;
        info.schema = schema_of(v.base);
        info.schema.name = name;
        info.schema.user_writable = true;
        if (!v.columns.empty()) {
            std::vector<AttributeDef> kept;
            for (const auto& a : info.schema.attributes) {
                if (std::find(v.columns.begin(), v.columns.end(), a.name) != v.columns.end()) {
                    kept.push_back(a);
                }
            }
            info.schema.attributes = kept;
        }
        if (!v.expose_geometry) {
            info.schema.geometry = GeometryKind::None;
        }
        info.editable = v.allowed != 0;
        return info;
    }
    if (auto it = bindings_.find(name); it != bindings_.end()) {
        info.kind = LayerKind::Virtual;
        info.base = it->second.auto_layer;
        info.schema = schema_of(it->second.auto_layer);
        info.schema.name = name;
        info.schema.user_writable = false;
        info.schema.geometry_nullable = true;
        return info;
    }
    if (auto it = virtuals_.find(name); it != virtuals_.end()) {
        info.kind = LayerKind::Virtual;
        info.schema = it->second.schema;
        return info;
    }
    throw Error(ErrorCode::NotFound, "unknown layer '" + name + "'", name);
}

std::vector<LayerInfo> Store::layers() const {
    std::vector<std::string> names;
    {
        std::shared_lock lock(mutex_);
        for (const auto& [n, _] : physical_) names.push_back(n);
        for (const auto& [n, _] : views_) names.push_back(n);
        for (const auto& [n, _] : bindings_) names.push_back(n);
        for (const auto& [n, _] : virtuals_) names.push_back(n);
    }
    std::sort(names.begin(), names.end());
    std::vector<LayerInfo> out;
    for (const auto& n : names) {
        out.push_back(layer_info(n));
    }
    return out;
}

bool Store::has_layer(const std::string& name) const {
    std::shared_lock lock(mutex_);
    return physical_.count(name) || views_.count(name) || bindings_.count(name) ||
           virtuals_.count(name);
}

// Read access over committed state; the caller holds the shared lock.
class Store::Committed : public ReadAccess {
public:
    explicit Committed(const Store& s) : s_(s) {}
    const Config& config() const override { return s_.config_; }
    bool has_layer(const std::string& layer) const override {
        return s_.physical_.count(layer) || s_.views_.count(layer) || s_.bindings_.count(layer) ||
               s_.virtuals_.count(layer);
    }
    const Schema& schema(const std::string& layer) const override { return s_.schema_of(layer); }
    const Feature* find(const std::string& layer, std::int64_t id) const override {
        auto it = s_.physical_.find(layer);
        if (it == s_.physical_.end()) {
            throw Error(ErrorCode::NotFound, "unknown layer '" + layer + "'", layer);
        }
        auto f = it->second.features.find(id);
        return f == it->second.features.end() ? nullptr : &f->second;
    }
    void scan(const std::string& layer,
              const std::function<void(const Feature&)>& fn) const override {
        auto it = s_.physical_.find(layer);
        if (it == s_.physical_.end()) {
            throw Error(ErrorCode::NotFound, "unknown layer '" + layer + "'", layer);
        }
        for (const auto& [_, f] : it->second.features) {
            fn(f);
        }
    }
    std::vector<Feature> features(const std::string& layer, const std::optional<geom::BBox>& bbox,
                                  const Filter& filter) const override {
        return s_.read_layer(*this, layer, bbox, filter);
    }

private:
    const Store& s_;
};

std::vector<Feature> Store::read_physical(const std::string& layer,
                                          const std::optional<geom::BBox>& bbox,
                                          const Filter& filter) const {
    const Physical& p = physical_.at(layer);
    std::vector<Feature> out;
    if (!bbox) {
        for (const auto& [_, f] : p.features) {
            if (!filter || filter(f)) {
                out.push_back(f);
            }
        }
        return out;
    }
    if (bbox->min_x > bbox->max_x || bbox->min_y > bbox->max_y) {
        return out;
    }
    std::vector<Entry> hits;
    p.index->tree.query(bgi::intersects(to_box(*bbox)), std::back_inserter(hits));
    std::vector<std::int64_t> ids;
    ids.reserve(hits.size());
    for (const auto& h : hits) {
        ids.push_back(h.second);
    }
    std::sort(ids.begin(), ids.end());
    for (std::int64_t id : ids) {
        const Feature& f = p.features.at(id);
        if (geometry_hits_box(f.geometry, *bbox) && (!filter || filter(f))) {
            out.push_back(f);
        }
    }
    return out;
}

Feature Store::project(const ProxyView& view, const Feature& f) const {
    Feature out;
    out.id = f.id;
    if (view.expose_geometry) {
        out.geometry = f.geometry;
    }
    if (view.columns.empty()) {
        out.attributes = f.attributes;
    } else {
        for (const auto& c : view.columns) {
            if (const Value* v = f.value(c)) {
                out.attributes.emplace(c, *v);
            }
        }
    }
    return out;
}

std::vector<Feature> Store::read_merged(const ReadAccess& access, const OverrideBinding& b) const {
    std::map<std::vector<Value>, const Feature*> overrides;
    for (const auto& [_, o] : physical_.at(b.override_layer).features) {
        std::vector<Value> key;
        for (const auto& k : b.keys) {
            const Value* v = o.value(k);
            key.push_back(v ? *v : Value{});
        }
        overrides.emplace(std::move(key), &o);
    }
    const MergeHook* hook = b.post_merge.empty() ? nullptr : &handlers_.merge_hook(b.post_merge);
    std::vector<Feature> out;
    for (const auto& [_, a] : physical_.at(b.auto_layer).features) {
        Feature merged = a;
        std::vector<Value> key;
        for (const auto& k : b.keys) {
            const Value* v = a.value(k);
            key.push_back(v ? *v : Value{});
        }
        const Feature* o = nullptr;
        if (auto it = overrides.find(key); it != overrides.end()) {
            o = it->second;
            for (const auto& c : b.columns) {
                if (c == "geometry") {
                    if (kind_of(o->geometry) != GeometryKind::None) {
                        merged.geometry = o->geometry;
                    }
                } else if (const Value* v = o->value(c)) {
                    merged.set(c, *v);
                }
            }
        }
        if (hook) {
            (*hook)(access, merged, o);
        }
        out.push_back(std::move(merged));
    }
    return out;
}

std::vector<Feature> Store::read_layer(const ReadAccess& access, const std::string& layer,
                                       const std::optional<geom::BBox>& bbox,
                                       const Filter& filter) const {
    if (physical_.count(layer)) {
        return read_physical(layer, bbox, filter);
    }
    std::vector<Feature> all;
    if (auto it = views_.find(layer); it != views_.end()) {
        for (const auto& f : read_layer(access, it->second.base, bbox, {})) {
            all.push_back(project(it->second, f));
        }
        if (filter) {
            std::erase_if(all, [&](const Feature& f) { return !filter(f); });
        }
        return all;
    } else if (auto b = bindings_.find(layer); b != bindings_.end()) {
        all = read_merged(access, b->second);
    } else if (auto v = virtuals_.find(layer); v != virtuals_.end()) {
        all = handlers_.reader(v->second.reader)(access);
        std::sort(all.begin(), all.end(),
                  [](const Feature& a, const Feature& b) { return a.id < b.id; });
    } else {
        throw Error(ErrorCode::NotFound, "unknown layer '" + layer + "'", layer);
    }
    std::vector<Feature> out;
    for (auto& f : all) {
        if (bbox) {
            if (bbox->min_x > bbox->max_x || bbox->min_y > bbox->max_y ||
                kind_of(f.geometry) == GeometryKind::None || !geometry_hits_box(f.geometry, *bbox)) {
                continue;
            }
        }
        if (!filter || filter(f)) {
            out.push_back(std::move(f));
        }
    }
    return out;
}

std::vector<Feature> Store::query(const std::string& layer, const std::optional<geom::BBox>& bbox,
                                  const Filter& filter) const {
    std::shared_lock lock(mutex_);
    Committed access(*this);
    return read_layer(access, layer, bbox, filter);
}

std::optional<Feature> Store::get(const std::string& layer, std::int64_t id) const {
    std::shared_lock lock(mutex_);
    if (auto it = physical_.find(layer); it != physical_.end()) {
        auto f = it->second.features.find(id);
        if (f == it->second.features.end()) {
            return std::nullopt;
        }
        return f->second;
    }
    Committed access(*this);
    for (auto& f : read_layer(access, layer, std::nullopt, {})) {
        if (f.id == id) {
            return f;
        }
    }
    return std::nullopt;
}

std::size_t Store::count(const std::string& layer) const {
    std::shared_lock lock(mutex_);
    if (auto it = physical_.find(layer); it != physical_.end()) {
        return it->second.features.size();
    }
    Committed access(*this);
    return read_layer(access, layer, std::nullopt, {}).size();
}

void Store::read(const std::function<void(const ReadAccess&)>& fn) const {
    std::shared_lock lock(mutex_);
    Committed access(*this);
    fn(access);
}

std::uint64_t Store::last_sequence() const {
    std::shared_lock lock(mutex_);
    return last_sequence_;
}

std::int64_t Store::next_feature_id() const {
    std::shared_lock lock(mutex_);
    return next_id_;
}

void Store::put(const std::string& layer, const Feature& f) {
    Physical& p = physical_.at(layer);
    p.index->remove(f.id);
    p.features[f.id] = f;
    p.index->insert(f);
}

void Store::erase(const std::string& layer, std::int64_t id) {
    Physical& p = physical_.at(layer);
    p.index->remove(id);
    p.features.erase(id);
}

std::map<std::string, std::map<std::int64_t, Feature>> Store::snapshot() const {
    std::shared_lock lock(mutex_);
    std::map<std::string, std::map<std::int64_t, Feature>> out;
    for (const auto& [name, p] : physical_) {
        out[name] = p.features;
    }
    return out;
}

void Store::commit(Transaction& tx, ChangeSet& out) {
    for (auto& r : tx.committed_) {
        r.sequence = ++last_sequence_;
    }
    out.records = std::move(tx.committed_);
    out.warnings = std::move(tx.warnings_);
    feed_.publish(out.records);
}

ChangeSet Store::apply(const Origin& origin, std::vector<Edit> edits) {
    std::vector<std::int64_t> ids;
    ChangeSet out = run(origin, [&](Transaction& tx) {
        for (auto& e : edits) {
            ChangeRecord rec;
            rec.kind = e.kind;
            rec.layer = e.layer;
            rec.id = e.feature.id;
            if (e.kind != ChangeKind::Delete) {
                rec.new_value = std::move(e.feature);
            }
            ids.push_back(tx.write(std::move(rec), std::move(e.expected)));
        }
    });
    out.edit_ids = std::move(ids);
    return out;
}

ChangeSet Store::run(const Origin& origin, const std::function<void(Transaction&)>& fn) {
    std::unique_lock lock(mutex_);
    Transaction tx(*this, origin);
    tx.next_id_before_ = next_id_;
    try {
        fn(tx);
        tx.run_deferred();
    } catch (...) {
        tx.rollback();
        throw;
    }
    ChangeSet out;
    commit(tx, out);
    return out;
}

// --- transaction ------------------------------------------------------------

const Config& Transaction::config() const { return store_.config_; }

bool Transaction::has_layer(const std::string& layer) const {
    return store_.physical_.count(layer) || store_.views_.count(layer) ||
           store_.bindings_.count(layer) || store_.virtuals_.count(layer);
}

const Schema& Transaction::schema(const std::string& layer) const {
    return store_.schema_of(layer);
}

const Feature* Transaction::find(const std::string& layer, std::int64_t id) const {
    return Store::Committed(store_).find(layer, id);
}

void Transaction::scan(const std::string& layer,
                       const std::function<void(const Feature&)>& fn) const {
    Store::Committed(store_).scan(layer, fn);
}

std::vector<Feature> Transaction::features(const std::string& layer,
                                           const std::optional<geom::BBox>& bbox,
                                           const Filter& filter) const {
    return store_.read_layer(*this, layer, bbox, filter);
}

std::int64_t Transaction::insert(const std::string& layer, Feature f) {
    ChangeRecord rec;
    rec.kind = ChangeKind::Insert;
    rec.layer = layer;
    rec.new_value = std::move(f);
    return write(std::move(rec), std::nullopt);
}

void Transaction::update(const std::string& layer, Feature f) {
    ChangeRecord rec;
    rec.kind = ChangeKind::Update;
    rec.layer = layer;
    rec.id = f.id;
    rec.new_value = std::move(f);
    write(std::move(rec), std::nullopt);
}

bool Transaction::update_if_changed(const std::string& layer, Feature f) {
    const Feature* cur = find(layer, f.id);
    if (cur && *cur == f) {
        return false;
    }
    update(layer, std::move(f));
    return true;
}

void Transaction::remove(const std::string& layer, std::int64_t id) {
    ChangeRecord rec;
    rec.kind = ChangeKind::Delete;
    rec.layer = layer;
    rec.id = id;
    write(std::move(rec), std::nullopt);
}

void Transaction::schedule(const std::string& name) {
    auto it = store_.triggers_.find(name);
    if (it == store_.triggers_.end() || it->second.timing != Timing::Deferred) {
        throw Error(ErrorCode::Misconfigured, "no deferred trigger named '" + name + "'");
    }
    scheduled_.insert({it->second.priority, name});
}

void Transaction::warn(std::string message) { warnings_.push_back(std::move(message)); }

namespace {
struct DepthScope {
    int& slot;
    int saved;
    DepthScope(int& s, int value) : slot(s), saved(s) { slot = value; }
    ~DepthScope() { slot = saved; }
};
} // namespace

std::int64_t Transaction::write_view(ChangeRecord& rec) {
    const ProxyView& view = store_.views_.at(rec.layer);
    if (!rec.origin.is_user()) {
        throw Error(ErrorCode::Unsupported,
                    "view '" + view.name + "' only accepts user edits; write to '" + view.base +
                        "' instead",
                    rec.layer, rec.id ? std::optional(rec.id) : std::nullopt);
    }
    const unsigned bit = event_bit(rec.kind);
    if (!(view.allowed & bit)) {
        auto it = view.refusals.find(rec.kind);
        std::string msg = it != view.refusals.end()
                              ? it->second
                              : "view '" + view.name + "' does not support " +
                                    std::string(to_string(rec.kind));
        throw Error(ErrorCode::Unsupported, msg, rec.layer,
                    rec.id ? std::optional(rec.id) : std::nullopt);
    }
    if (rec.kind != ChangeKind::Insert) {
        std::optional<Feature> base;
        if (store_.physical_.count(view.base)) {
            if (const Feature* f = find(view.base, rec.id)) {
                base = *f;
            }
        } else {
            for (auto& f : features(view.base)) {
                if (f.id == rec.id) {
                    base = std::move(f);
                    break;
                }
            }
        }
        if (!base) {
            throw Error(ErrorCode::NotFound, "no feature " + std::to_string(rec.id) + " in view",
                        rec.layer, rec.id);
        }
        rec.old_value = store_.project(view, *base);
    }
    if (rec.new_value) {
        rec.new_value->id = rec.id;
    }
    DepthScope scope(current_depth_, rec.depth);
    const RecordHandler& handler = store_.handlers_.record(view.handlers.at(rec.kind));
    handler(*this, rec);
    return rec.id;
}

std::int64_t Transaction::write(ChangeRecord rec, std::optional<Feature> expected) {
    Store& s = store_;
    rec.depth = current_depth_ + 1;
    rec.origin = current_depth_ < 0 ? origin_ : Origin::system(origin_.session);
    if (rec.depth > s.config_.trigger_depth_limit) {
        throw Error(ErrorCode::CyclicTriggerError,
                    "trigger cascade exceeded the depth limit of " +
                        std::to_string(s.config_.trigger_depth_limit),
                    rec.layer, rec.id ? std::optional(rec.id) : std::nullopt);
    }
    if (rec.kind == ChangeKind::Update && rec.new_value) {
        rec.id = rec.new_value->id;
    }
    if (s.views_.count(rec.layer)) {
        if (expected && rec.kind != ChangeKind::Insert) {
            // Compare against the projected view row before handing over.
            std::optional<Feature> current;
            for (auto& f : features(rec.layer)) {
                if (f.id == rec.id) {
                    current = std::move(f);
                    break;
                }
            }
            if (!current || *current != *expected) {
                throw Error(ErrorCode::ConcurrentModification,
                            "feature changed since it was read", rec.layer, rec.id);
            }
        }
        return write_view(rec);
    }
    if (s.bindings_.count(rec.layer) || s.virtuals_.count(rec.layer)) {
        throw Error(ErrorCode::Unsupported, "layer '" + rec.layer + "' is derived and read-only",
                    rec.layer);
    }
    auto pit = s.physical_.find(rec.layer);
    if (pit == s.physical_.end()) {
        throw Error(ErrorCode::NotFound, "unknown layer '" + rec.layer + "'", rec.layer);
    }
    const Schema& schema = pit->second.schema;
    if (rec.origin.is_user() && !schema.user_writable) {
        throw Error(ErrorCode::Rejected,
                    "layer '" + rec.layer + "' is maintained by the system and cannot be edited "
                                            "directly",
                    rec.layer, rec.id ? std::optional(rec.id) : std::nullopt);
    }

    switch (rec.kind) {
    case ChangeKind::Insert:
        rec.id = s.next_id_++;
        rec.new_value->id = rec.id;
        break;
    case ChangeKind::Update:
    case ChangeKind::Delete: {
        const Feature* cur = find(rec.layer, rec.id);
        if (!cur) {
            throw Error(ErrorCode::NotFound,
                        "no feature " + std::to_string(rec.id) + " in " + rec.layer, rec.layer,
                        rec.id);
        }
        rec.old_value = *cur;
        if (rec.kind == ChangeKind::Delete) {
            rec.new_value.reset();
        }
        break;
    }
    }
    if (expected && (!rec.old_value || *rec.old_value != *expected)) {
        throw Error(ErrorCode::ConcurrentModification, "feature changed since it was read",
                    rec.layer, rec.id);
    }

    const unsigned bit = event_bit(rec.kind);
    auto run_triggers = [&](Timing timing, ChangeRecord& r) {
        auto it = s.trigger_order_.find({r.layer, timing});
        if (it == s.trigger_order_.end()) {
            return;
        }
        const std::vector<std::string> names = it->second;
        for (const auto& name : names) {
            const TriggerSpec& spec = s.triggers_.at(name);
            if (!(spec.events & bit)) {
                continue;
            }
            if (timing == Timing::Deferred) {
                scheduled_.insert({spec.priority, spec.name});
                continue;
            }
            DepthScope scope(current_depth_, r.depth);
            s.handlers_.record(spec.handler)(*this, r);
        }
    };

    run_triggers(Timing::Before, rec);
    if (rec.new_value) {
        rec.new_value->id = rec.id;
        try {
            conform(schema, *rec.new_value, rec.origin.is_user());
        } catch (const Error& e) {
            throw e.with_location(rec.layer, rec.id);
        }
    }

    undo_.push_back({rec.layer, rec.id, rec.old_value});
    if (rec.new_value) {
        s.put(rec.layer, *rec.new_value);
    } else {
        s.erase(rec.layer, rec.id);
    }
    committed_.push_back(rec);

    ChangeRecord after = rec;
    run_triggers(Timing::After, after);
    run_triggers(Timing::Deferred, after);
    return rec.id;
}

void Transaction::run_deferred() {
    std::size_t deferred_count = 0;
    for (const auto& [_, t] : store_.triggers_) {
        if (t.timing == Timing::Deferred) {
            ++deferred_count;
        }
    }
    const std::size_t budget =
        static_cast<std::size_t>(store_.config_.trigger_depth_limit) * std::max<std::size_t>(1, deferred_count);
    std::size_t rounds = 0;
    while (!scheduled_.empty()) {
        if (++rounds > budget) {
            throw Error(ErrorCode::CyclicTriggerError,
                        "deferred triggers kept rescheduling each other");
        }
        const auto next = *scheduled_.begin();
        scheduled_.erase(scheduled_.begin());
        const TriggerSpec& spec = store_.triggers_.at(next.second);
        DepthScope scope(current_depth_, 0);
        store_.handlers_.deferred(spec.handler)(*this);
    }
}

void Transaction::rollback() {
    for (auto it = undo_.rbegin(); it != undo_.rend(); ++it) {
        if (it->before) {
            store_.put(it->layer, *it->before);
        } else {
            store_.erase(it->layer, it->id);
        }
    }
    undo_.clear();
    committed_.clear();
    store_.next_id_ = next_id_before_;
}

// --- persistence ------------------------------------------------------------

namespace {

constexpr const char* kFormat = "streetbase-project";
constexpr int kFormatVersion = 1;

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::ParseError, "cannot read " + p.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::NotFound, "cannot write " + p.string());
    }
    out << content;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

json parse_json(const std::string& text, const std::filesystem::path& file) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t line = line_of(text, e.byte == 0 ? 0 : e.byte - 1);
        throw Error(ErrorCode::ParseError,
                    file.string() + ":" + std::to_string(line) + ": " + e.what());
    }
}

} // namespace

void Store::save(const std::filesystem::path& dir) const {
    std::shared_lock lock(mutex_);
    std::filesystem::create_directories(dir / "layers");

    json manifest;
    manifest["format"] = kFormat;
    manifest["version"] = kFormatVersion;
    manifest["next_feature_id"] = next_id_;
    manifest["last_sequence"] = last_sequence_;
    manifest["config"] = to_json(config_);
    json layers = json::array();
    for (const auto& [name, p] : physical_) {
        layers.push_back(geojson::schema_to_json(p.schema));
    }
    manifest["layers"] = layers;
    json triggers = json::array();
    for (const auto& [name, t] : triggers_) {
        triggers.push_back({{"name", t.name},
                            {"layer", t.layer},
                            {"timing", to_string(t.timing)},
                            {"events", events_json(t.events)},
                            {"handler", t.handler},
                            {"priority", t.priority}});
    }
    manifest["triggers"] = triggers;
    json views = json::array();
    for (const auto& [name, v] : views_) {
        json handlers = json::object();
        for (const auto& [k, h] : v.handlers) {
            handlers[std::string(to_string(k))] = h;
        }
        views.push_back({{"name", v.name},
                         {"base", v.base},
                         {"columns", v.columns},
                         {"geometry", v.expose_geometry},
                         {"allowed", events_json(v.allowed)},
                         {"handlers", handlers}});
    }
    manifest["proxy_views"] = views;
    json bindings = json::array();
    for (const auto& [name, b] : bindings_) {
        bindings.push_back({{"name", b.name},
                            {"auto", b.auto_layer},
                            {"override", b.override_layer},
                            {"keys", b.keys},
                            {"columns", b.columns},
                            {"post_merge", b.post_merge}});
    }
    manifest["override_bindings"] = bindings;
    json virtuals = json::array();
    for (const auto& [name, v] : virtuals_) {
        virtuals.push_back({{"name", name}, {"reader", v.reader}});
    }
    manifest["virtual_layers"] = virtuals;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    for (const auto& [name, p] : physical_) {
        std::string out = "{\"type\":\"FeatureCollection\",\"features\":[\n";
        bool first = true;
        for (const auto& [_, f] : p.features) {
            if (!first) {
                out += ",\n";
            }
            first = false;
            out += geojson::feature_to_json(f).dump();
        }
        out += first ? "]}\n" : "\n]}\n";
        write_file(dir / "layers" / (name + ".geojson"), out);
    }
}

void Store::load(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) {
        throw Error(ErrorCode::NotFound, "no manifest.json in " + dir.string());
    }
    const std::string manifest_text = read_file(manifest_path);
    const json manifest = parse_json(manifest_text, manifest_path);
    if (!manifest.is_object() || manifest.value("format", "") != kFormat) {
        throw Error(ErrorCode::ParseError, manifest_path.string() + ": not a project manifest");
    }
    if (manifest.value("version", 0) != kFormatVersion) {
        throw Error(ErrorCode::ParseError, manifest_path.string() + ": unsupported version");
    }

    std::vector<Schema> schemas;
    try {
        for (const auto& l : manifest.at("layers")) {
            schemas.push_back(geojson::schema_from_json(l));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, manifest_path.string() + ": " + e.what());
    }

    std::map<std::string, std::map<std::int64_t, Feature>> loaded;
    for (const auto& schema : schemas) {
        auto& target = loaded[schema.name];
        const auto file = dir / "layers" / (schema.name + ".geojson");
        if (!std::filesystem::exists(file)) {
            continue;
        }
        const std::string text = read_file(file);
        const json fc = parse_json(text, file);
        if (!fc.is_object() || fc.value("type", "") != "FeatureCollection" ||
            !fc.contains("features") || !fc["features"].is_array()) {
            throw Error(ErrorCode::ParseError, file.string() + ":1: not a FeatureCollection");
        }
        const auto& feats = fc["features"];
        const bool line_per_feature =
            static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == feats.size() + 2;
        for (std::size_t i = 0; i < feats.size(); ++i) {
            try {
                Feature f = geojson::feature_from_json(feats[i], schema);
                conform(schema, f, false);
                if (f.id <= 0 || target.count(f.id)) {
                    throw Error(ErrorCode::ParseError, "missing or duplicate feature id");
                }
                target.emplace(f.id, std::move(f));
            } catch (const Error& e) {
                const std::string where =
                    line_per_feature ? std::to_string(i + 2) : "feature " + std::to_string(i);
                throw Error(ErrorCode::ParseError, file.string() + ":" + where + ": " + e.what(),
                            schema.name);
            }
        }
    }

    std::unique_lock lock(mutex_);
    for (const auto& schema : schemas) {
        if (!physical_.count(schema.name)) {
            check_name_free(schema.name);
            physical_.emplace(schema.name, Physical{schema, {}, std::make_unique<Index>()});
        }
    }
    for (const auto& t : manifest.value("triggers", json::array())) {
        const std::string name = t.value("name", "");
        if (triggers_.count(name)) {
            continue;
        }
        TriggerSpec spec{name, t.value("layer", ""), parse_timing(t.value("timing", "after")),
                         events_from(t.value("events", json::array())), t.value("handler", ""),
                         t.value("priority", 0)};
        lock.unlock();
        register_trigger(spec);
        lock.lock();
    }
    for (auto& [name, p] : physical_) {
        p.features.clear();
        p.index = std::make_unique<Index>();
        if (auto it = loaded.find(name); it != loaded.end()) {
            for (auto& [id, f] : it->second) {
                p.index->insert(f);
                p.features.emplace(id, std::move(f));
            }
        }
    }
    if (manifest.contains("config")) {
        config_ = config_from_json(manifest["config"]);
    }
    next_id_ = manifest.value("next_feature_id", std::int64_t{1});
    last_sequence_ = manifest.value("last_sequence", std::uint64_t{0});
    for (const auto& [_, p] : physical_) {
        if (!p.features.empty()) {
            next_id_ = std::max(next_id_, p.features.rbegin()->first + 1);
        }
    }
    feed_.reset(last_sequence_);
}

} // namespace streetbase
