use std::sync::Arc;

use moodloop_core::library::{Library, Playlist, Track, TrackId};
use moodloop_core::mood::{Mood, PlaylistId};
use moodloop_core::player::{Advance, PlayerState, PlaylistEngine, ScriptedRandom};
use moodloop_core::time::Timestamp;

fn engine_with(len: usize) -> PlaylistEngine {
    let tracks = (0..len)
        .map(|i| {
            let path = format!("calm/{i}.ogg");
            Track { track_id: TrackId::for_path(&path), title: path.clone(), file_path: path, mood: Mood::new("calm"), duration_s: None }
        })
        .collect();
    let playlist = Playlist { id: PlaylistId::new("calm"), mood: Mood::new("calm"), tracks };
    PlaylistEngine::new(Arc::new(Library::from_playlists("/m", vec![playlist]).unwrap()), 120)
}

fn at(engine: &PlaylistEngine, index: usize) -> PlayerState {
    engine
        .select_playlist(&PlayerState::startup("s"), &Mood::new("calm"), &mut ScriptedRandom::new([index]), Timestamp(0))
        .unwrap()
}

#[test]
fn loop_laws_hold_for_every_length_and_start() {
    let now = Timestamp(5);
    for n in 1..=10 {
        let engine = engine_with(n);
        for start in 0..n {
            let s = at(&engine, start);
            let mut walked = s.clone();
            for _ in 0..n {
                walked = engine.next_track(&walked, Advance::User(now));
                assert!(walked.track_index < n);
            }
            assert_eq!(walked.track_index, start);

            let mut ended = s.clone();
            for _ in 0..n {
                ended = engine.next_track(&ended, Advance::TrackEnded);
            }
            assert_eq!(ended, s);

            let np = engine.prev_track(&engine.next_track(&s, Advance::User(now)), now);
            let pn = engine.next_track(&engine.prev_track(&s, now), Advance::User(now));
            assert_eq!((np.track_index, pn.track_index), (start, start));
            assert!(engine.prev_track(&s, now).track_index < n);
        }
    }
}
