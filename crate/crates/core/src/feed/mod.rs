//! Order-book feed: event parsing, book reconstruction, grid sampling, archive I/O.

pub mod archive;
pub mod book;
pub mod event;
pub mod live;
pub mod sample;

pub use archive::{read_archive, write_archive, ArchiveError, ArchiveRead};
pub use book::{BookError, OrderBookState};
pub use event::{parse_feed_event, BookEvent, BookUpdate, EventKind, FeedError, Level};
pub use sample::{sample_all, sample_book, BookSample, GridSpec, Hlc, MidSeries, SampledBook};
