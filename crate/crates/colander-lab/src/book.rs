// Book chapters are included as documentation once written.
