pub mod book;
pub mod dataset;
pub mod feed;
pub mod labeler;
pub mod oracle;
pub mod pipeline;
pub mod rank;
pub mod service;
pub mod sim;
pub mod tcn;
pub mod tensorize;
