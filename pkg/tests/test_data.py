import numpy as np
import pytest

from snqn.data import (
    CLICK,
    PURCHASE,
    DataError,
    PreprocessConfig,
    RawEvent,
    build_train_items,
    ingest,
    iter_batches,
    load_dataset,
    preprocess,
    save_dataset,
    window_ids,
)

GENERIC_HEADER = "session_id\ttimestamp\titem_id\tbehavior\n"


def write_generic(tmp_path, rows, name="events.tsv"):
    path = tmp_path / name
    path.write_text(GENERIC_HEADER + "".join(f"{r}\n" for r in rows))
    return str(path)


def events_from(rows):
    return [
        RawEvent(sid, ts, item, PURCHASE if b == "purchase" else CLICK)
        for sid, ts, item, b in rows
    ]


class TestIngestGeneric:
    def test_empty_file(self, tmp_path):
        path = write_generic(tmp_path, [])
        assert ingest(path, "generic_tsv") == []

    def test_single_session(self, tmp_path):
        path = write_generic(
            tmp_path,
            ["s1\t3\ta\tclick", "s1\t1\tb\tclick", "s1\t2\tc\tpurchase"],
        )
        events = ingest(path, "generic_tsv")
        assert len(events) == 3
        assert [ev.item_id for ev in events] == ["b", "c", "a"]  # time-sorted

    def test_timestamp_ties_keep_file_order(self, tmp_path):
        path = write_generic(
            tmp_path, ["s1\t5\tfirst\tclick", "s1\t5\tsecond\tclick"]
        )
        events = ingest(path, "generic_tsv")
        assert [ev.item_id for ev in events] == ["first", "second"]

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = write_generic(tmp_path, ["s1\t1\ta\tclick", "s1\t2\tb"])
        with pytest.raises(DataError, match=":3"):
            ingest(path, "generic_tsv")

    def test_unknown_behavior_rejected(self, tmp_path):
        path = write_generic(tmp_path, ["s1\t1\ta\tadd_to_wishlist"])
        with pytest.raises(DataError, match="add_to_wishlist"):
            ingest(path, "generic_tsv")

    def test_missing_file(self):
        with pytest.raises(DataError, match="input not found"):
            ingest("/nonexistent/events.tsv", "generic_tsv")


class TestIngestRetailRocket:
    # 20-row fixture: 8 views, 7 addtocart, 5 transactions over 3 visitors
    FIXTURE = (
        "timestamp,visitorid,event,itemid,transactionid\n"
        + "".join(
            f"{1000 + i},v{i % 3},{event},i{i % 6},\n"
            for i, event in enumerate(
                ["view"] * 8 + ["addtocart"] * 7 + ["transaction"] * 5
            )
        )
    )

    def test_behavior_mapping_matches_hand_count(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text(self.FIXTURE)
        events = ingest(str(path), "retailrocket_events")
        assert len(events) == 20
        clicks = sum(1 for ev in events if ev.behavior == CLICK)
        purchases = sum(1 for ev in events if ev.behavior == PURCHASE)
        assert clicks == 8  # views
        assert purchases == 12  # addtocart + transaction

    def test_unknown_event_rejected(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text(
            "timestamp,visitorid,event,itemid,transactionid\n1,v1,remove,i1,\n"
        )
        with pytest.raises(DataError, match="remove"):
            ingest(str(path), "retailrocket_events")


class TestIngestRC15:
    def test_clicks_and_buys_merge(self, tmp_path):
        d = tmp_path / "rc15"
        d.mkdir()
        (d / "clicks.csv").write_text(
            "s1,2014-04-07T10:51:09.277Z,i1,0\n"
            "s1,2014-04-07T10:54:09.868Z,i2,0\n"
            "s2,2014-04-07T13:56:37.614Z,i3,0\n"
        )
        (d / "buys.csv").write_text("s1,2014-04-07T10:57:00.868Z,i2,1000,1\n")
        events = ingest(str(d), "rc15_clicks+buys")
        assert len(events) == 4
        s1 = [ev for ev in events if ev.session_id == "s1"]
        assert [ev.behavior for ev in s1] == [CLICK, CLICK, PURCHASE]


class TestPreprocess:
    def test_short_sessions_dropped(self):
        events = events_from(
            [("s1", 1, "a", "click"), ("s1", 2, "b", "click"),
             ("s2", 1, "a", "click"), ("s2", 2, "b", "click"), ("s2", 3, "c", "click")]
        )
        ds = preprocess(events, PreprocessConfig(min_session_len=3))
        assert ds.stats["sequences"] == 1

    def test_item_filter_cascades_into_length_filter(self):
        # item "rare" appears twice (< 3); removing it shortens s1 below 3
        events = events_from(
            [
                ("s1", 1, "a", "click"), ("s1", 2, "rare", "click"), ("s1", 3, "b", "click"),
                ("s2", 1, "a", "click"), ("s2", 2, "b", "click"), ("s2", 3, "a", "purchase"),
                ("s3", 1, "b", "click"), ("s3", 2, "rare", "click"), ("s3", 3, "a", "click"),
            ]
        )
        keep_all = preprocess(events, PreprocessConfig(min_session_len=3))
        assert keep_all.stats["sequences"] == 3
        filtered = preprocess(
            events, PreprocessConfig(min_session_len=3, min_item_freq=3)
        )
        assert filtered.stats["sequences"] == 1
        assert "rare" not in filtered.item_vocab

    def test_session_sampling_is_deterministic(self):
        events = events_from(
            [(f"s{i}", t, f"item{t}", "click") for i in range(30) for t in range(3)]
        )
        a = preprocess(events, PreprocessConfig(sample_n_sessions=10, seed=5))
        b = preprocess(events, PreprocessConfig(sample_n_sessions=10, seed=5))
        c = preprocess(events, PreprocessConfig(sample_n_sessions=10, seed=6))
        assert a.stats["sequences"] == 10
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_splits_are_disjoint_and_8_1_1(self):
        events = events_from(
            [(f"s{i:03d}", t, f"item{i % 7}", "click") for i in range(100) for t in range(3)]
        )
        ds = preprocess(events, PreprocessConfig(seed=0))
        ids = {
            split: {s.session_id for s in ds.splits[split]}
            for split in ("train", "val", "test")
        }
        assert len(ids["train"]) == 80 and len(ids["val"]) == 10 and len(ids["test"]) == 10
        assert not (ids["train"] & ids["val"])
        assert not (ids["train"] & ids["test"])
        assert not (ids["val"] & ids["test"])

    def test_all_sessions_filtered_is_error(self):
        events = events_from([("s1", 1, "a", "click")])
        with pytest.raises(DataError):
            preprocess(events, PreprocessConfig(min_session_len=3))

    def test_stats_fields(self):
        events = events_from(
            [("s1", 1, "a", "click"), ("s1", 2, "b", "purchase"), ("s1", 3, "a", "click")]
        )
        ds = preprocess(events, PreprocessConfig())
        assert ds.stats["sequences"] == 1
        assert ds.stats["items"] == 2
        assert ds.stats["clicks"] == 2
        assert ds.stats["purchases"] == 1


class TestReplayItems:
    def build(self, session_items, behaviors=None):
        rows = []
        behaviors = behaviors or ["click"] * len(session_items)
        for t, (item, beh) in enumerate(zip(session_items, behaviors)):
            rows.append(("s1", t, item, beh))
        # a filler session so splits stay non-degenerate
        ds = preprocess(
            events_from(rows), PreprocessConfig(min_session_len=3, split_ratios=(1.0, 0, 0))
        )
        return ds

    def test_three_event_session_yields_two_items(self):
        ds = self.build(["a", "b", "c"])
        items = build_train_items(ds, "train")
        assert len(items) == 2
        vocab = ds.item_vocab
        pad = ds.n_items
        assert items.states[0].tolist() == [vocab["a"]] + [pad] * 9
        assert items.lens.tolist() == [1, 2]
        assert items.actions.tolist() == [vocab["b"], vocab["c"]]
        assert items.is_terminal.tolist() == [False, True]
        assert items.next_states[1].tolist()[:3] == [vocab["a"], vocab["b"], vocab["c"]]

    def test_reward_class_follows_target_interaction(self):
        ds = self.build(["a", "b", "c"], ["click", "purchase", "click"])
        items = build_train_items(ds, "train")
        assert items.target_behavior.tolist() == [PURCHASE, CLICK]

    def test_long_session_windows_truncate_to_ten(self):
        names = [f"i{k}" for k in range(12)]
        ds = self.build(names)
        items = build_train_items(ds, "train")
        last = items.states[-1]
        assert items.lens[-1] == 10
        expected = [ds.item_vocab[f"i{k}"] for k in range(1, 11)]
        assert last.tolist() == expected  # most recent 10 of the first 11

    def test_window_ids_left_of_window(self):
        ids, ln = window_ids(np.arange(4), 2, pad=99)
        assert ids.tolist() == [0, 1] + [99] * 8
        assert ln == 2

    def test_batches_respect_item_invariants(self):
        ds = self.build(["a", "b", "c", "a", "b", "d", "e"])
        items = build_train_items(ds, "train")
        for batch in iter_batches(items, ds.n_items, 4, 3, epoch=0, seed=9):
            negs = batch["negatives"]
            assert batch["states"].shape[1] == 10
            for i in range(len(batch["actions"])):
                row = negs[i].tolist()
                assert batch["actions"][i] not in row
                assert ds.n_items not in row
                assert len(set(row)) == len(row)

    def test_epoch_streams_are_deterministic_and_vary_by_epoch(self):
        ds = self.build(["a", "b", "c", "a", "b", "d", "e"])
        items = build_train_items(ds, "train")

        def stream(epoch):
            return [
                (b["actions"].tolist(), b["negatives"].tolist())
                for b in iter_batches(items, ds.n_items, 4, 2, epoch, seed=13)
            ]

        assert stream(0) == stream(0)
        assert stream(0) != stream(1)  # reshuffled and resampled per epoch


@pytest.mark.skipif(
    not __import__("os").environ.get("SNQN_RC15_DIR"),
    reason="full RC15 corpus not bundled; set SNQN_RC15_DIR to run",
)
def test_rc15_full_scale_statistics():
    """Known statistics of the full RC15 preprocessing pipeline.

    With min_session_len=3 and a 200k-session subsample, the pipeline is
    expected to report exactly 200,000 sequences and roughly 26,702 items,
    1,110,965 clicks, and 43,946 purchases; exact click/purchase counts
    depend on the sampling seed, so they are held to within 5%.
    """
    import os

    events = ingest(os.environ["SNQN_RC15_DIR"], "rc15_clicks+buys")
    ds = preprocess(
        events, PreprocessConfig(min_session_len=3, sample_n_sessions=200_000, seed=0)
    )
    assert ds.stats["sequences"] == 200_000
    assert abs(ds.stats["clicks"] - 1_110_965) / 1_110_965 < 0.05
    assert abs(ds.stats["purchases"] - 43_946) / 43_946 < 0.05


class TestPersistence:
    def test_round_trip_preserves_digest(self, tmp_path):
        events = events_from(
            [(f"s{i}", t, f"item{(i + t) % 5}", "purchase" if t == 2 else "click")
             for i in range(20) for t in range(3)]
        )
        ds = preprocess(events, PreprocessConfig(seed=4))
        save_dataset(ds, str(tmp_path / "ds"))
        loaded = load_dataset(str(tmp_path / "ds"))
        assert loaded.digest() == ds.digest()
        assert loaded.item_vocab == ds.item_vocab
        assert loaded.stats["sequences"] == ds.stats["sequences"]

    def test_missing_directory_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(str(tmp_path / "nope"))
