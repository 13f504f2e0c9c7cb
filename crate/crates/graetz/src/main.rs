fn main() { graetz::cli::main_entry(); }
