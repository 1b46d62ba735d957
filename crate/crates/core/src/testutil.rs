//! Fixtures shared by unit tests.

use crate::data::Schema;

pub(crate) fn schema(cards: &[usize], classes: usize) -> Schema {
    Schema::categorical(cards, classes)
}
