#pragma once

// Layer store and trigger engine. All writes go through a Transaction that
// runs under the store's single writer lock; triggers, proxy views and
// deferred handlers see the transaction and can cascade further writes.

#include <any>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "streetbase/config.hpp"
#include "streetbase/errors.hpp"
#include "streetbase/feature.hpp"

namespace streetbase {

enum class ChangeKind { Insert, Update, Delete };
std::string_view to_string(ChangeKind kind);
ChangeKind parse_change_kind(std::string_view text);

enum Event : unsigned { OnInsert = 1, OnUpdate = 2, OnDelete = 4, OnAny = 7 };
unsigned event_bit(ChangeKind kind);

struct Origin {
    enum class Kind { User, System };
    Kind kind = Kind::System;
    std::string session;

    static Origin user(std::string session) { return {Kind::User, std::move(session)}; }
    static Origin system(std::string session = {}) { return {Kind::System, std::move(session)}; }
    bool is_user() const { return kind == Kind::User; }

    friend bool operator==(const Origin&, const Origin&) = default;
};

struct ChangeRecord {
    ChangeKind kind = ChangeKind::Insert;
    std::string layer;
    std::int64_t id = 0;
    std::optional<Feature> old_value;
    std::optional<Feature> new_value;
    Origin origin;
    int depth = 0;
    std::uint64_t sequence = 0;
};

struct ChangeSet {
    std::vector<ChangeRecord> records;
    std::vector<std::string> warnings;
    std::vector<std::int64_t> edit_ids; // one per edit passed to Store::apply
};

// A requested edit. For updates the feature replaces the stored one
// wholesale; `expected` guards against concurrent modification.
struct Edit {
    ChangeKind kind = ChangeKind::Insert;
    std::string layer;
    Feature feature;
    std::optional<Feature> expected;

    static Edit insert(std::string layer, Feature f) {
        return {ChangeKind::Insert, std::move(layer), std::move(f), std::nullopt};
    }
    static Edit update(std::string layer, Feature f) {
        return {ChangeKind::Update, std::move(layer), std::move(f), std::nullopt};
    }
    static Edit remove(std::string layer, std::int64_t id) {
        Feature f;
        f.id = id;
        return {ChangeKind::Delete, std::move(layer), std::move(f), std::nullopt};
    }
};

enum class Timing { Before, After, Deferred };
std::string_view to_string(Timing t);

struct TriggerSpec {
    std::string name;
    std::string layer;
    Timing timing = Timing::After;
    unsigned events = OnAny;
    std::string handler;
    int priority = 0; // lower runs first
};

struct ProxyView {
    std::string name;
    std::string base;
    std::vector<std::string> columns; // empty: every base column
    bool expose_geometry = true;
    unsigned allowed = OnAny;
    std::map<ChangeKind, std::string> handlers;
    // Message returned when a disallowed event is attempted.
    std::map<ChangeKind, std::string> refusals;
};

struct OverrideBinding {
    std::string name; // the merged virtual layer
    std::string auto_layer;
    std::string override_layer;
    std::vector<std::string> keys;
    std::vector<std::string> columns; // may contain "geometry"
    std::string post_merge;           // optional MergeHook name
};

struct VirtualLayer {
    Schema schema;
    std::string reader;
};

class Transaction;
class ReadAccess;

using RecordHandler = std::function<void(Transaction&, ChangeRecord&)>;
using DeferredHandler = std::function<void(Transaction&)>;
using VirtualReader = std::function<std::vector<Feature>(const ReadAccess&)>;
// Called on each merged row with the matching override row, if any.
using MergeHook = std::function<void(const ReadAccess&, Feature& merged, const Feature* override_row)>;

class HandlerRegistry {
public:
    void add(const std::string& name, RecordHandler h);
    void add_deferred(const std::string& name, DeferredHandler h);
    void add_reader(const std::string& name, VirtualReader r);
    void add_merge_hook(const std::string& name, MergeHook h);

    const RecordHandler& record(const std::string& name) const;
    const DeferredHandler& deferred(const std::string& name) const;
    const VirtualReader& reader(const std::string& name) const;
    const MergeHook& merge_hook(const std::string& name) const;
    bool has_record(const std::string& name) const { return records_.count(name) > 0; }
    bool has_deferred(const std::string& name) const { return deferred_.count(name) > 0; }

private:
    std::map<std::string, RecordHandler> records_;
    std::map<std::string, DeferredHandler> deferred_;
    std::map<std::string, VirtualReader> readers_;
    std::map<std::string, MergeHook> hooks_;
};

enum class LayerKind { Physical, View, Virtual };
std::string_view to_string(LayerKind kind);

struct LayerInfo {
    std::string name;
    LayerKind kind = LayerKind::Physical;
    Schema schema;    // effective schema (projected for views)
    std::string base; // views only
    bool editable = false;
};

using Filter = std::function<bool(const Feature&)>;

// Read-only access to the current state, committed or in-flight.
class ReadAccess {
public:
    virtual ~ReadAccess() = default;
    virtual const Config& config() const = 0;
    virtual bool has_layer(const std::string& layer) const = 0;
    virtual const Schema& schema(const std::string& layer) const = 0;
    // Physical layers only; nullptr when absent.
    virtual const Feature* find(const std::string& layer, std::int64_t id) const = 0;
    // Physical layers only, in id order.
    virtual void scan(const std::string& layer,
                      const std::function<void(const Feature&)>& fn) const = 0;
    // Any layer kind; bbox/filter as in Store::query.
    virtual std::vector<Feature> features(const std::string& layer,
                                          const std::optional<geom::BBox>& bbox = std::nullopt,
                                          const Filter& filter = {}) const = 0;

    const Feature& get(const std::string& layer, std::int64_t id) const;
};

class ChangeFeed {
public:
    explicit ChangeFeed(std::size_t capacity = 200000) : capacity_(capacity) {}

    void publish(const std::vector<ChangeRecord>& records);
    // Records with sequence > since. Throws OutOfRange when `since` predates
    // the retained history.
    std::vector<ChangeRecord> since(std::uint64_t since, std::size_t max = SIZE_MAX) const;
    // Blocks until a record newer than `since` exists or the timeout elapses.
    bool wait(std::uint64_t since, std::chrono::milliseconds timeout) const;
    std::uint64_t last() const;
    std::uint64_t oldest_available() const;
    void reset(std::uint64_t last_sequence);

private:
    std::size_t capacity_;
    mutable std::mutex mutex_;
    mutable std::condition_variable cv_;
    std::deque<ChangeRecord> history_;
    std::uint64_t last_ = 0;
};

class Store;

class Transaction : public ReadAccess {
public:
    const Config& config() const override;
    bool has_layer(const std::string& layer) const override;
    const Schema& schema(const std::string& layer) const override;
    const Feature* find(const std::string& layer, std::int64_t id) const override;
    void scan(const std::string& layer,
              const std::function<void(const Feature&)>& fn) const override;
    std::vector<Feature> features(const std::string& layer,
                                  const std::optional<geom::BBox>& bbox = std::nullopt,
                                  const Filter& filter = {}) const override;

    // Writes cascade through triggers. Writes issued from inside a handler
    // carry system origin and depth + 1.
    std::int64_t insert(const std::string& layer, Feature f);
    void update(const std::string& layer, Feature f);
    void remove(const std::string& layer, std::int64_t id);
    // Skips the write when the stored feature already equals `f`.
    bool update_if_changed(const std::string& layer, Feature f);

    void schedule(const std::string& deferred_trigger);
    void warn(std::string message);
    const Origin& origin() const { return origin_; }
    int depth() const { return current_depth_; }

    template <class T>
    T& scratch(const std::string& key) {
        auto it = scratch_.find(key);
        if (it == scratch_.end()) {
            it = scratch_.emplace(key, std::make_any<T>()).first;
        }
        return std::any_cast<T&>(it->second);
    }

private:
    friend class Store;
    Transaction(Store& store, Origin origin) : store_(store), origin_(std::move(origin)) {}

    std::int64_t write(ChangeRecord rec, std::optional<Feature> expected);
    std::int64_t write_view(ChangeRecord& rec);
    void run_deferred();
    void rollback();

    struct Undo {
        std::string layer;
        std::int64_t id;
        std::optional<Feature> before;
    };

    Store& store_;
    Origin origin_;
    int current_depth_ = -1;
    std::vector<ChangeRecord> committed_;
    std::vector<Undo> undo_;
    std::int64_t next_id_before_ = 0;
    std::set<std::pair<int, std::string>> scheduled_;
    std::vector<std::string> warnings_;
    std::map<std::string, std::any> scratch_;
};

class Store {
public:
    explicit Store(Config config = {});
    ~Store();
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    HandlerRegistry& handlers() { return handlers_; }
    const Config& config() const { return config_; }
    void set_config(const Config& config);

    void create_layer(Schema schema);
    void register_trigger(TriggerSpec spec);
    void register_proxy_view(ProxyView view);
    void register_override_binding(OverrideBinding binding);
    void register_virtual_layer(VirtualLayer layer);

    std::vector<LayerInfo> layers() const;
    LayerInfo layer_info(const std::string& name) const;
    bool has_layer(const std::string& name) const;

    ChangeSet apply(const Origin& origin, std::vector<Edit> edits);
    // Runs a procedural operation as one atomic change set.
    ChangeSet run(const Origin& origin, const std::function<void(Transaction&)>& fn);

    std::vector<Feature> query(const std::string& layer,
                               const std::optional<geom::BBox>& bbox = std::nullopt,
                               const Filter& filter = {}) const;
    std::optional<Feature> get(const std::string& layer, std::int64_t id) const;
    std::size_t count(const std::string& layer) const;
    // Read-only callback under the shared lock.
    void read(const std::function<void(const ReadAccess&)>& fn) const;

    ChangeFeed& feed() { return feed_; }
    const ChangeFeed& feed() const { return feed_; }
    std::uint64_t last_sequence() const;
    std::int64_t next_feature_id() const;

    void save(const std::filesystem::path& dir) const;
    // Replaces all layer contents; registrations must already be installed.
    void load(const std::filesystem::path& dir);

    // Full copy of every physical layer, for snapshot comparisons.
    std::map<std::string, std::map<std::int64_t, Feature>> snapshot() const;

private:
    friend class Transaction;
    class Committed;
    struct Index;
    struct Physical {
        Schema schema;
        std::map<std::int64_t, Feature> features;
        std::unique_ptr<Index> index;
    };

    // Unlocked internals.
    const Schema& schema_of(const std::string& layer) const;
    std::vector<Feature> read_layer(const ReadAccess& access, const std::string& layer,
                                    const std::optional<geom::BBox>& bbox,
                                    const Filter& filter) const;
    std::vector<Feature> read_physical(const std::string& layer,
                                       const std::optional<geom::BBox>& bbox,
                                       const Filter& filter) const;
    std::vector<Feature> read_merged(const ReadAccess& access, const OverrideBinding& b) const;
    Feature project(const ProxyView& view, const Feature& f) const;
    void put(const std::string& layer, const Feature& f);
    void erase(const std::string& layer, std::int64_t id);
    void check_name_free(const std::string& name) const;
    void commit(Transaction& tx, ChangeSet& out);

    Config config_;
    HandlerRegistry handlers_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, Physical> physical_;
    std::map<std::string, ProxyView> views_;
    std::map<std::string, OverrideBinding> bindings_;
    std::map<std::string, VirtualLayer> virtuals_;
    std::map<std::string, TriggerSpec> triggers_;
    // Per layer and timing, trigger names sorted by (priority, name).
    std::map<std::pair<std::string, Timing>, std::vector<std::string>> trigger_order_;
    std::int64_t next_id_ = 1;
    std::uint64_t last_sequence_ = 0;
    ChangeFeed feed_;
};

} // namespace streetbase
